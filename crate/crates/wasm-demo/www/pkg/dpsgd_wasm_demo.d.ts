/* tslint:disable */
/* eslint-disable */

/**
 * Clips the 2-D gradient `(x, y)` as one vector at `c` and as two
 * one-coordinate layers at `(cx, cy)`.
 */
export function clip_demo(x: number, y: number, c: number, cx: number, cy: number): string;

/**
 * CLT estimate for individual clipping next to the framework bound, with
 * `layers > 1` meaning layerwise clipping over that many groups.
 */
export function clt_explorer(n: number, m: number, epochs: number, sigma: number, layers: number): string;

/**
 * Attacks a clipped scalar sum (`C = 1`, noise std `2σ`) on neighbors whose
 * differentiating contributions saturate at `±C`, and compares the observed
 * trade-off curve with `G_{1/σ}`.
 */
export function tradeoff_demo(sigma: number, trials: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly clip_demo: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly clt_explorer: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly tradeoff_demo: (a: number, b: number, c: bigint) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
