import { ApiClient } from "./api.js";
import { acquireCamera } from "./camera.js";
import { CaptureFlow } from "./controller.js";
import { render } from "./render.js";

/**
 * Browser entry point. The only configuration is the service base URL,
 * taken from `window.PHOTOQC_BASE_URL` or a
 * `<meta name="photoqc-base-url" content="...">` tag; empty means
 * same-origin.
 */

function baseUrl(): string {
  const fromGlobal = (window as unknown as { PHOTOQC_BASE_URL?: string }).PHOTOQC_BASE_URL;
  if (typeof fromGlobal === "string") return fromGlobal;
  const meta = document.querySelector('meta[name="photoqc-base-url"]');
  return meta?.getAttribute("content") ?? "";
}

export async function boot(root: HTMLElement): Promise<CaptureFlow> {
  const api = new ApiClient({ baseUrl: baseUrl() });
  const flow: CaptureFlow = new CaptureFlow({
    api,
    cameraFactory: () => acquireCamera(),
    storage: window.sessionStorage,
    onChange: () => draw(),
  });
  const draw = () =>
    render(root, flow.state, {
      camera: flow.camera,
      pendingImage: flow.pendingImage,
      handlers: {
        onCapture: () => void flow.takePhoto(),
        onRetake: () => flow.retake(),
        onSubmit: () => void flow.submit(),
      },
    });
  try {
    await flow.start();
  } catch (exc) {
    root.textContent = "";
    const p = document.createElement("p");
    p.className = "error";
    p.textContent = "Could not reach the photo service. Please reload to try again.";
    root.appendChild(p);
    throw exc;
  }
  draw();
  return flow;
}

const rootElement = document.getElementById("app");
if (rootElement) {
  void boot(rootElement);
}
