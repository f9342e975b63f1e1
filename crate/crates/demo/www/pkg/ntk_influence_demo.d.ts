/* tslint:disable */
/* eslint-disable */

/**
 * `[distance, s_0, analytic_0, empirical_0, s_1, ...]`.
 */
export function compareKernels(n: number, dim: number, width: number, seed: number): Float64Array;

/**
 * `[lambda_0, lower_bound_0, mean_error_rate_0, lambda_1, ...]`.
 */
export function lambdaSweep(n_train: number, clusters: number, seed: number): Float64Array;

/**
 * `[t_0, share_0, t_1, share_1, ...]`.
 */
export function noiseTrace(n_train: number, noise: number, leave_one_out: boolean, seed: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly compareKernels: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly lambdaSweep: (a: number, b: number, c: number) => [number, number, number, number];
    readonly noiseTrace: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
