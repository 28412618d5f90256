/**
 * Clinical note text preprocessing: strip de-identification placeholders
 * ([**...**] spans), lowercase, collapse whitespace runs, trim.
 * Idempotent: preprocess(preprocess(x)) === preprocess(x).
 */

export function removePlaceholders(text: string): string {
  let out = text;
  // nested fragments can expose a fresh [**...**] span after one pass
  while (out.includes("[**")) {
    const next = out.replace(/\[\*\*.*?\*\*\]/gs, " ");
    if (next === out) {
      // an unterminated "[**" tail; drop from the marker onward
      out = out.slice(0, out.indexOf("[**"));
      break;
    }
    out = next;
  }
  return out;
}

export function preprocess(text: string): string {
  return removePlaceholders(String(text ?? ""))
    .toLowerCase()
    .replace(/\s+/g, " ")
    .trim();
}
