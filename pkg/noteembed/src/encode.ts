/**
 * Note encoders. Every encoder tokenizes, truncates to MAX_TOKENS and
 * emits a 768-dimensional vector, deterministic for identical text.
 *
 * "hashed-768" is the built-in offline encoder: an order-sensitive hash
 * projection that stands in for a language model when no weights are
 * available (the downstream pipeline treats vectors as opaque).
 * Any other model id is loaded as a frozen transformer via
 * @xenova/transformers and the final-layer [CLS] vector is extracted;
 * a load failure is fatal and names the model id.
 */

export const EMBEDDING_DIM = 768;
export const MAX_TOKENS = 512;
export const HASHED_MODEL_ID = "hashed-768";
export const DEFAULT_MODEL_ID = "emilyalsentzer/Bio_ClinicalBERT";

export interface Encoder {
  modelId: string;
  encode(text: string): Promise<Float32Array>;
}

export function tokenize(text: string): string[] {
  return text.split(" ").filter((t) => t.length > 0);
}

export function truncateTokens(tokens: string[]): string[] {
  return tokens.slice(0, MAX_TOKENS);
}

/** FNV-1a 32-bit hash. */
function fnv1a(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

/** xorshift32 stream seeded from a hash; returns values in [-1, 1). */
function* xorshift(seed: number): Generator<number> {
  let s = seed >>> 0 || 0x9e3779b9;
  for (;;) {
    s ^= s << 13;
    s >>>= 0;
    s ^= s >> 17;
    s ^= s << 5;
    s >>>= 0;
    yield (s / 0x80000000) - 1.0;
  }
}

class HashedEncoder implements Encoder {
  modelId = HASHED_MODEL_ID;

  async encode(text: string): Promise<Float32Array> {
    const tokens = truncateTokens(tokenize(text));
    const acc = new Float64Array(EMBEDDING_DIM);
    tokens.forEach((token, position) => {
      const stream = xorshift(fnv1a(`${position}:${token}`));
      for (let d = 0; d < EMBEDDING_DIM; d++) {
        acc[d] += stream.next().value;
      }
    });
    const scale = tokens.length > 0 ? 1.0 / Math.sqrt(tokens.length) : 0.0;
    let norm = 0.0;
    for (let d = 0; d < EMBEDDING_DIM; d++) {
      acc[d] *= scale;
      norm += acc[d] * acc[d];
    }
    norm = Math.sqrt(norm);
    const out = new Float32Array(EMBEDDING_DIM);
    for (let d = 0; d < EMBEDDING_DIM; d++) {
      out[d] = norm > 0 ? acc[d] / norm : 0.0;
    }
    return out;
  }
}

type Extractor = (
  text: string,
  opts: object,
) => Promise<{ data: Float32Array; dims: number[] }>;

class TransformerEncoder implements Encoder {
  private extractor: Extractor | null = null;

  constructor(public modelId: string) {}

  private async load() {
    if (this.extractor) return;
    try {
      // optional runtime dependency; install @xenova/transformers to use
      // pretrained encoders
      const moduleId = "@xenova/transformers";
      const { pipeline } = await import(moduleId);
      this.extractor = (await pipeline(
        "feature-extraction",
        this.modelId,
      )) as unknown as Extractor;
    } catch (err) {
      throw new Error(
        `failed to load pretrained encoder '${this.modelId}': ${String(err)}`,
      );
    }
  }

  async encode(text: string): Promise<Float32Array> {
    await this.load();
    const tokens = truncateTokens(tokenize(text)).join(" ");
    // token-level output: [1, seq, hidden]; index 0 is the [CLS] position
    const output = await this.extractor!(tokens, { pooling: "none" });
    const hidden = output.dims[output.dims.length - 1];
    if (hidden !== EMBEDDING_DIM) {
      throw new Error(
        `model '${this.modelId}' emits ${hidden}-dim vectors, expected ${EMBEDDING_DIM}`,
      );
    }
    return Float32Array.from(output.data.slice(0, EMBEDDING_DIM));
  }
}

export function makeEncoder(modelId: string = HASHED_MODEL_ID): Encoder {
  if (modelId === HASHED_MODEL_ID) {
    return new HashedEncoder();
  }
  return new TransformerEncoder(modelId);
}
