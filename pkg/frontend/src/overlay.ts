/** Overlay presentation helpers (pure, no DOM). */

/** Opacity presets the overlay toggle cycles through. */
export const OPACITY_PRESETS = [0, 0.4, 0.8] as const;

export function nextOpacity(current: number): number {
  const index = OPACITY_PRESETS.findIndex((value) => Math.abs(value - current) < 1e-9);
  return OPACITY_PRESETS[(index + 1) % OPACITY_PRESETS.length];
}

/**
 * Class colors, matching the palette the service bakes into overlay PNGs
 * (index 0 is background and never drawn).
 */
const PALETTE: ReadonlyArray<readonly [number, number, number]> = [
  [0, 0, 0],
  [230, 97, 0],
  [93, 58, 155],
  [26, 133, 255],
  [212, 17, 89],
  [64, 176, 166],
  [255, 194, 10],
  [153, 79, 0],
  [12, 123, 220],
  [254, 254, 98],
  [211, 95, 183],
];

export function classColor(classIndex: number): string {
  const [r, g, b] = PALETTE[classIndex % PALETTE.length];
  return `rgb(${r}, ${g}, ${b})`;
}
