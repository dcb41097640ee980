// Wires the recording loop to the DOM: press/release capture, upload,
// one outcome panel per result, re-record prompting, session verdict.

import { ApiClient, ApiError } from "./api.js";
import type { Recorder } from "./recorder.js";
import {
  SessionState,
  acceptedBlobs,
  acceptedCoughs,
  initialState,
  sessionReady,
  transition,
} from "./state.js";
import { MIN_CONTENT_SECONDS, captureToWavBlob } from "./wav.js";

export const PANEL_TEXT: Record<string, string> = {
  covid_likely: "COVID-19 likely",
  covid_not_likely: "COVID-19 not likely",
  inconclusive: "Test inconclusive",
  not_a_cough: "That didn't sound like a cough",
};

export interface UiElements {
  recordButton: HTMLButtonElement;
  statusLine: HTMLElement;
  resultPanel: HTMLElement;
  rerecordPrompt: HTMLElement;
  sessionButton: HTMLButtonElement;
  sessionPanel: HTMLElement;
  errorPanel: HTMLElement;
}

export class ScreeningUi {
  state: SessionState = initialState();

  constructor(
    private elements: UiElements,
    private api: ApiClient,
    private recorder: Recorder,
  ) {
    elements.recordButton.addEventListener("mousedown", () => void this.onPress());
    elements.recordButton.addEventListener("mouseup", () => void this.onRelease());
    elements.sessionButton.addEventListener("click", () => void this.onSessionVerdict());
    this.render();
  }

  private setState(next: SessionState): void {
    this.state = next;
    this.render();
  }

  async onPress(): Promise<void> {
    if (this.state.phase !== "idle" && this.state.phase !== "result") return;
    try {
      await this.recorder.start();
    } catch (err) {
      this.state = { ...this.state, lastError: (err as Error).message, phase: "idle" };
      this.render();
      return;
    }
    this.setState(transition(this.state, { kind: "press" }));
  }

  async onRelease(): Promise<void> {
    if (this.state.phase !== "recording") return;
    const { samples, sampleRate } = await this.recorder.stop();
    const duration = samples.length / sampleRate;
    if (duration < MIN_CONTENT_SECONDS) {
      this.setState(transition(this.state, { kind: "discard_short", durationSeconds: duration }));
      return;
    }
    const blob = captureToWavBlob(samples, sampleRate);
    this.setState(transition(this.state, { kind: "release", blob, durationSeconds: duration }));
    try {
      const response = await this.api.screen(blob);
      this.setState(transition(this.state, { kind: "response", response }));
    } catch (err) {
      const message = err instanceof ApiError ? err.message : "network failure, try again";
      this.setState(transition(this.state, { kind: "upload_failed", message }));
    }
  }

  async onSessionVerdict(): Promise<void> {
    if (!sessionReady(this.state)) return;
    try {
      const verdict = await this.api.screenSession(acceptedBlobs(this.state));
      this.setState(transition(this.state, { kind: "session_verdict", verdict }));
    } catch (err) {
      const message = err instanceof ApiError ? err.message : "network failure, try again";
      this.state = { ...this.state, lastError: message };
      this.render();
    }
  }

  rerecord(): void {
    this.setState(transition(this.state, { kind: "reset_for_rerecord" }));
  }

  render(): void {
    const { recordButton, statusLine, resultPanel, rerecordPrompt, sessionButton, sessionPanel, errorPanel } =
      this.elements;

    recordButton.disabled = this.state.phase === "uploading";
    statusLine.textContent = {
      idle: "Hold the button and cough",
      recording: "Recording... release to stop",
      uploading: "Analyzing...",
      result: "Done",
    }[this.state.phase];

    const response = this.state.lastResponse;
    if (this.state.phase === "result" && response) {
      resultPanel.hidden = false;
      resultPanel.dataset.result = response.result;
      resultPanel.textContent = PANEL_TEXT[response.result] ?? response.result;
    } else if (this.state.phase !== "result") {
      resultPanel.hidden = true;
      resultPanel.textContent = "";
      delete resultPanel.dataset.result;
    }

    const promptRerecord =
      this.state.phase === "result" && response !== null && response.prompt_rerecord;
    rerecordPrompt.hidden = !promptRerecord;
    rerecordPrompt.textContent = promptRerecord
      ? "Please re-record: find a quieter spot and cough directly at the microphone."
      : "";

    sessionButton.disabled = !sessionReady(this.state);
    sessionButton.textContent = `Session verdict (${acceptedCoughs(this.state)}/3 coughs)`;

    if (this.state.verdict) {
      sessionPanel.hidden = false;
      sessionPanel.textContent = `Session verdict: ${
        PANEL_TEXT[this.state.verdict.result] ?? this.state.verdict.result
      } (from ${this.state.verdict.valid_coughs} coughs)`;
    } else {
      sessionPanel.hidden = true;
    }

    errorPanel.hidden = !this.state.lastError;
    errorPanel.textContent = this.state.lastError ?? "";
  }
}

export function mount(document: Document, baseUrl: string, recorder: Recorder): ScreeningUi {
  const byId = (id: string) => {
    const el = document.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el;
  };
  const elements: UiElements = {
    recordButton: byId("record") as HTMLButtonElement,
    statusLine: byId("status"),
    resultPanel: byId("result"),
    rerecordPrompt: byId("rerecord"),
    sessionButton: byId("session") as HTMLButtonElement,
    sessionPanel: byId("session-result"),
    errorPanel: byId("error"),
  };
  return new ScreeningUi(elements, new ApiClient(baseUrl), recorder);
}
