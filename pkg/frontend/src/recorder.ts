// Press-and-release microphone capture producing raw Float32 samples.
//
// Uses an AudioContext tap so we control the sample format end to end; the
// UI swaps in a fake implementation under test.

export interface Recorder {
  start(): Promise<void>;
  stop(): Promise<{ samples: Float32Array; sampleRate: number }>;
}

export class PermissionDenied extends Error {}
export class NoMicrophone extends Error {}

export class MicrophoneRecorder implements Recorder {
  private chunks: Float32Array[] = [];
  private context: AudioContext | null = null;
  private stream: MediaStream | null = null;
  private processor: ScriptProcessorNode | null = null;

  async start(): Promise<void> {
    if (!navigator.mediaDevices?.getUserMedia) {
      throw new NoMicrophone("microphone capture is not available in this browser");
    }
    try {
      this.stream = await navigator.mediaDevices.getUserMedia({ audio: true });
    } catch (err) {
      if (err instanceof DOMException && err.name === "NotFoundError") {
        throw new NoMicrophone("no microphone device found");
      }
      throw new PermissionDenied("microphone permission was denied");
    }
    this.chunks = [];
    this.context = new AudioContext();
    const source = this.context.createMediaStreamSource(this.stream);
    this.processor = this.context.createScriptProcessor(4096, 1, 1);
    this.processor.onaudioprocess = (event) => {
      this.chunks.push(new Float32Array(event.inputBuffer.getChannelData(0)));
    };
    source.connect(this.processor);
    this.processor.connect(this.context.destination);
  }

  async stop(): Promise<{ samples: Float32Array; sampleRate: number }> {
    const rate = this.context?.sampleRate ?? 44100;
    this.processor?.disconnect();
    this.stream?.getTracks().forEach((track) => track.stop());
    await this.context?.close();
    const total = this.chunks.reduce((n, c) => n + c.length, 0);
    const samples = new Float32Array(total);
    let offset = 0;
    for (const chunk of this.chunks) {
      samples.set(chunk, offset);
      offset += chunk.length;
    }
    this.context = null;
    this.stream = null;
    this.processor = null;
    this.chunks = [];
    return { samples, sampleRate: rate };
  }
}
