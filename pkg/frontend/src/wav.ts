// Client-side conversion to the canonical upload format: mono PCM16 WAV at
// 44.1 kHz, trimmed or zero-padded toward 3 seconds.  The server validates
// again; doing it here avoids most rejected uploads.

export const TARGET_RATE = 44100;
export const TARGET_SECONDS = 3.0;
export const MIN_CONTENT_SECONDS = 0.5;

export function resampleLinear(
  samples: Float32Array,
  fromRate: number,
  toRate: number = TARGET_RATE,
): Float32Array {
  if (fromRate === toRate) return samples;
  const duration = samples.length / fromRate;
  const outLength = Math.round(duration * toRate);
  const out = new Float32Array(outLength);
  for (let i = 0; i < outLength; i++) {
    const t = (i / toRate) * fromRate;
    const lo = Math.min(Math.floor(t), samples.length - 1);
    const hi = Math.min(lo + 1, samples.length - 1);
    const frac = t - lo;
    out[i] = samples[lo] * (1 - frac) + samples[hi] * frac;
  }
  return out;
}

export function trimOrPad(samples: Float32Array, rate: number = TARGET_RATE): Float32Array {
  const target = Math.round(rate * TARGET_SECONDS);
  if (samples.length === target) return samples;
  if (samples.length > target) {
    const start = Math.floor((samples.length - target) / 2);
    return samples.slice(start, start + target);
  }
  const out = new Float32Array(target);
  const left = Math.floor((target - samples.length) / 2);
  out.set(samples, left);
  return out;
}

export function encodeWavPcm16(samples: Float32Array, rate: number = TARGET_RATE): ArrayBuffer {
  const buffer = new ArrayBuffer(44 + samples.length * 2);
  const view = new DataView(buffer);
  view.setUint32(0, 0x52494646, false); // 'RIFF'
  view.setUint32(4, 36 + samples.length * 2, true);
  view.setUint32(8, 0x57415645, false); // 'WAVE'
  view.setUint32(12, 0x666d7420, false); // 'fmt '
  view.setUint32(16, 16, true);
  view.setUint16(20, 1, true); // PCM
  view.setUint16(22, 1, true); // mono
  view.setUint32(24, rate, true);
  view.setUint32(28, rate * 2, true); // byte rate
  view.setUint16(32, 2, true); // block align
  view.setUint16(34, 16, true);
  view.setUint32(36, 0x64617461, false); // 'data'
  view.setUint32(40, samples.length * 2, true);
  let offset = 44;
  for (let i = 0; i < samples.length; i++) {
    const clamped = Math.max(-1, Math.min(1, samples[i]));
    const q = Math.max(-32768, Math.min(32767, Math.round(clamped * 32768)));
    view.setInt16(offset, q, true);
    offset += 2;
  }
  return buffer;
}

export function captureToWavBlob(samples: Float32Array, captureRate: number): Blob {
  const resampled = resampleLinear(samples, captureRate);
  const shaped = trimOrPad(resampled);
  return new Blob([encodeWavPcm16(shaped)], { type: "audio/wav" });
}
