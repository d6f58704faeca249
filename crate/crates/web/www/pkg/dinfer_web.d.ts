/* tslint:disable */
/* eslint-disable */

/**
 * Empirical ROC of members N(shift, 1) against non-members N(0, 1).
 */
export class Roc {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly auc: number;
    readonly fpr: Float64Array;
    readonly tpr: Float64Array;
    readonly tprAt1pct: number;
}

/**
 * Mean DI p-value at each set size, four features shifted by `shift` for suspects.
 *
 * Returns `[n0, p0, n1, p1, ...]`; sizes where the test cannot run are skipped.
 */
export function diCurve(shift: number, sizes: Uint32Array, seed: number): Float64Array;

/**
 * A ring of `n` points noised to step `t` of a 1000-step linear schedule.
 *
 * Returns interleaved `[x0, y0, x1, y1, ...]`.
 */
export function noisedRing(n: number, t: number, seed: number): Float64Array;

export function roc(shift: number, n: number, seed: number): Roc;

export function signalFraction(t: number): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_roc_free: (a: number, b: number) => void;
    readonly diCurve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly noisedRing: (a: number, b: number, c: number) => [number, number, number, number];
    readonly roc: (a: number, b: number, c: number) => [number, number, number];
    readonly roc_auc: (a: number) => number;
    readonly roc_fpr: (a: number) => [number, number];
    readonly roc_tpr: (a: number) => [number, number];
    readonly roc_tpr_at_1pct: (a: number) => number;
    readonly signalFraction: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
