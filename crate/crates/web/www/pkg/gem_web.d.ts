/* tslint:disable */
/* eslint-disable */

/**
 * Classifies distances against a fitted model (as returned in `fit_mixture`'s
 * `model` field) with intervals of `n_sigma` component deviations.
 */
export function classify(model: string, distances: string, n_sigma: number): string;

/**
 * Fits mixtures of 1..=`max_components` to the distances and keeps the BIC minimiser.
 *
 * Returns `{model, sweep, curve}`; `curve` samples the fitted density over the
 * data range for plotting.
 */
export function fit_mixture(distances: string, max_components: number, seed: bigint): string;

/**
 * ROC curve, AUROC, FPR95 and the Youden threshold for ID vs OOD scores
 * (higher score = more OOD). Infinite sentinel thresholds serialise as null.
 */
export function roc(id_scores: string, ood_scores: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly classify: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly fit_mixture: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly roc: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
