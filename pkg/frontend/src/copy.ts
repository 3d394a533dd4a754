import type { Reason } from "./types.js";

/**
 * Every user-visible string lives in this one table so the wording can be
 * reviewed (or localized) in a single place.
 */

/** Rejection reason strings, keyed by the server's reason codes. */
export const REASON_COPY: Record<Reason, string> = {
  blur: "Your image looks too blurry.",
  lighting: "There are lighting issues with your photo.",
  zoom_crop: "The photo is too zoomed in or out.",
  other: "The photo quality isn't sufficient.",
};

/** Counter line shown with feedback, e.g. "Attempt 2 of 4". */
export function attemptCounter(attemptNumber: number, attemptCap: number): string {
  return `Attempt ${attemptNumber} of ${attemptCap}`;
}

export const COPY = {
  title: "Photo check",
  captureHint: "Center the area of concern in the frame, then take a photo.",
  captureButton: "Take photo",
  filePickerHint: "Camera unavailable — choose a photo instead.",
  previewHint: "Review your photo before sending it.",
  retakeButton: "Retake",
  submitButton: "Submit",
  waiting: "Checking photo quality…",
  feedbackHeading: "Please try again",
  tryAgainButton: "Take another photo",
  accepted: "Photo accepted",
  acceptedDetail: "Thanks — your photo has been submitted for review.",
  exhaustedHeading: "All attempts used",
  exhaustedDetail:
    "You have used all your attempts. Your best photo was selected and " +
    "submitted automatically — no further action is needed.",
  networkRetry: "We couldn't reach the server. Your attempt was not used — please try submitting again.",
  uploadRejected: "The photo could not be processed. Your attempt was not used — please retake it.",
  remainingNote: (n: number) => (n === 1 ? "1 attempt left" : `${n} attempts left`),
} as const;
