/**
 * Photo sources. The live camera uses getUserMedia; when the camera is
 * denied or missing we fall back to a plain file picker. Tests and scripted
 * runs inject a queue-backed source instead.
 */

export interface CameraSource {
  readonly kind: "live" | "file" | "scripted";
  /** Element to mount in the capture screen (video preview or file input). */
  mount(): HTMLElement;
  /** Resolve one captured photo. */
  capture(): Promise<Blob>;
  stop(): void;
}

export class CameraUnavailable extends Error {
  constructor(message: string) {
    super(message);
    this.name = "CameraUnavailable";
  }
}

type GetUserMedia = (constraints: MediaStreamConstraints) => Promise<MediaStream>;

/** Live device camera rendered into a <video> element. */
export class LiveCamera implements CameraSource {
  readonly kind = "live";
  private stream: MediaStream | null = null;
  private readonly video: HTMLVideoElement;

  constructor(private readonly getUserMedia: GetUserMedia, doc: Document = document) {
    this.video = doc.createElement("video");
    this.video.setAttribute("playsinline", "true");
    this.video.muted = true;
    this.video.dataset.testid = "camera-video";
  }

  async open(): Promise<void> {
    this.stream = await this.getUserMedia({
      video: { facingMode: "environment" },
      audio: false,
    });
    this.video.srcObject = this.stream;
    await this.video.play().catch(() => undefined);
  }

  mount(): HTMLElement {
    return this.video;
  }

  async capture(): Promise<Blob> {
    const width = this.video.videoWidth || 640;
    const height = this.video.videoHeight || 480;
    const canvas = this.video.ownerDocument.createElement("canvas");
    canvas.width = width;
    canvas.height = height;
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new CameraUnavailable("canvas 2d context unavailable");
    ctx.drawImage(this.video, 0, 0, width, height);
    return await new Promise<Blob>((resolve, reject) => {
      canvas.toBlob(
        (blob) => (blob ? resolve(blob) : reject(new CameraUnavailable("frame capture failed"))),
        "image/png",
      );
    });
  }

  stop(): void {
    for (const track of this.stream?.getTracks() ?? []) track.stop();
    this.stream = null;
  }
}

/** Fallback when the camera is denied: a native file picker. */
export class FilePickerSource implements CameraSource {
  readonly kind = "file";
  private readonly input: HTMLInputElement;

  constructor(doc: Document = document) {
    this.input = doc.createElement("input");
    this.input.type = "file";
    this.input.accept = "image/*";
    this.input.setAttribute("capture", "environment");
    this.input.dataset.testid = "file-picker";
  }

  mount(): HTMLElement {
    return this.input;
  }

  async capture(): Promise<Blob> {
    const file = this.input.files?.[0];
    if (!file) throw new CameraUnavailable("no file selected");
    return file;
  }

  stop(): void {
    // Nothing to release.
  }
}

/** Deterministic source fed from a queue of blobs; used by tests and demos. */
export class ScriptedCamera implements CameraSource {
  readonly kind = "scripted";
  private readonly queue: Blob[];

  constructor(frames: Blob[], private readonly doc: Document = document) {
    this.queue = [...frames];
  }

  mount(): HTMLElement {
    const div = this.doc.createElement("div");
    div.dataset.testid = "scripted-camera";
    return div;
  }

  async capture(): Promise<Blob> {
    const frame = this.queue.shift();
    if (!frame) throw new CameraUnavailable("scripted camera queue empty");
    return frame;
  }

  stop(): void {
    // Nothing to release.
  }
}

/**
 * Open the device camera, falling back to the file picker when permission is
 * denied or no camera API exists.
 */
export async function acquireCamera(
  getUserMedia: GetUserMedia | undefined = globalThis.navigator?.mediaDevices?.getUserMedia?.bind(
    globalThis.navigator.mediaDevices,
  ),
  doc: Document = document,
): Promise<CameraSource> {
  if (getUserMedia) {
    const live = new LiveCamera(getUserMedia, doc);
    try {
      await live.open();
      return live;
    } catch {
      live.stop();
    }
  }
  return new FilePickerSource(doc);
}
