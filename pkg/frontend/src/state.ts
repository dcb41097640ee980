// Session state machine for the recording loop.
//
// One recording may be in progress at a time; the session verdict is only
// offered once at least three clips have been accepted as coughs.  Nothing
// is kept beyond the in-memory session.

export type Phase = "idle" | "recording" | "uploading" | "result";

export type RecordingStatus = "accepted" | "rejected" | "too_short" | "failed";

export interface RecordingEntry {
  blob: Blob;
  durationSeconds: number;
  status: RecordingStatus;
}

export interface ClassifierOutputs {
  dtl_mc: { label: string; probabilities: number[] };
  cml_mc: { label: string; probabilities: number[] };
  dtl_bc: { label: string; probability: number };
}

export interface ScreeningResponse {
  result: "covid_likely" | "covid_not_likely" | "inconclusive" | "not_a_cough";
  prompt_rerecord: boolean;
  detector: { label: string; probability: number } | null;
  classifiers: ClassifierOutputs | null;
  record_id: string | null;
  model_versions: Record<string, string>;
}

export interface SessionVerdict {
  result: string;
  valid_coughs: number;
}

export type SessionEvent =
  | { kind: "press" }
  | { kind: "release"; blob: Blob; durationSeconds: number }
  | { kind: "discard_short"; durationSeconds: number }
  | { kind: "response"; response: ScreeningResponse }
  | { kind: "upload_failed"; message: string }
  | { kind: "reset_for_rerecord" }
  | { kind: "session_verdict"; verdict: SessionVerdict };

export class InvalidTransition extends Error {
  constructor(phase: Phase, event: string) {
    super(`event '${event}' is not allowed in phase '${phase}'`);
  }
}

export interface SessionState {
  phase: Phase;
  recordings: RecordingEntry[];
  lastResponse: ScreeningResponse | null;
  lastError: string | null;
  verdict: SessionVerdict | null;
}

export function initialState(): SessionState {
  return {
    phase: "idle",
    recordings: [],
    lastResponse: null,
    lastError: null,
    verdict: null,
  };
}

export function acceptedCoughs(state: SessionState): number {
  return state.recordings.filter((r) => r.status === "accepted").length;
}

export function sessionReady(state: SessionState): boolean {
  return acceptedCoughs(state) >= 3;
}

const ALLOWED: Record<Phase, SessionEvent["kind"][]> = {
  idle: ["press", "session_verdict"],
  recording: ["release", "discard_short"],
  uploading: ["response", "upload_failed"],
  result: ["press", "reset_for_rerecord", "session_verdict"],
};

export function transition(state: SessionState, event: SessionEvent): SessionState {
  if (!ALLOWED[state.phase].includes(event.kind)) {
    throw new InvalidTransition(state.phase, event.kind);
  }
  switch (event.kind) {
    case "press":
      return { ...state, phase: "recording", lastError: null };
    case "release":
      return {
        ...state,
        phase: "uploading",
        recordings: [
          ...state.recordings,
          { blob: event.blob, durationSeconds: event.durationSeconds, status: "accepted" },
        ],
      };
    case "discard_short":
      return {
        ...state,
        phase: "idle",
        lastError: `recording too short (${event.durationSeconds.toFixed(2)} s); hold the button for up to 3 seconds`,
      };
    case "response": {
      const recordings = [...state.recordings];
      const last = recordings[recordings.length - 1];
      if (last) {
        recordings[recordings.length - 1] = {
          ...last,
          status: event.response.result === "not_a_cough" ? "rejected" : "accepted",
        };
      }
      return {
        ...state,
        phase: "result",
        recordings,
        lastResponse: event.response,
        lastError: null,
      };
    }
    case "upload_failed": {
      const recordings = [...state.recordings];
      const last = recordings[recordings.length - 1];
      if (last) {
        recordings[recordings.length - 1] = { ...last, status: "failed" };
      }
      return { ...state, phase: "result", recordings, lastError: event.message };
    }
    case "reset_for_rerecord":
      return { ...state, phase: "idle", lastResponse: null, lastError: null };
    case "session_verdict":
      if (!sessionReady(state)) {
        throw new InvalidTransition(state.phase, event.kind);
      }
      return { ...state, phase: "result", verdict: event.verdict };
  }
}

export function acceptedBlobs(state: SessionState): Blob[] {
  return state.recordings.filter((r) => r.status === "accepted").map((r) => r.blob);
}
