import { MicrophoneRecorder } from "./recorder.js";
import { mount } from "./ui.js";

const baseUrl =
  new URLSearchParams(window.location.search).get("service") ?? "http://127.0.0.1:8000";

mount(document, baseUrl, new MicrophoneRecorder());
