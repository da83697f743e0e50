/* tslint:disable */
/* eslint-disable */

/**
 * RGBA grid of training images, one row per class.
 */
export class Preview {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    rgba(): Uint8Array;
    readonly height: number;
    readonly width: number;
}

export function dataset_preview(rho: number, seed: bigint, per_class: number, scale: number): Preview;

export function gradnorm_histogram(rho: number, seed: bigint, n_train: number, epochs: number, alpha: number): string;

export function toy_curve(size_major: number, size_minor: number, a: number, points: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_preview_free: (a: number, b: number) => void;
    readonly dataset_preview: (a: number, b: bigint, c: number, d: number) => [number, number, number];
    readonly gradnorm_histogram: (a: number, b: bigint, c: number, d: number, e: number) => [number, number, number, number];
    readonly preview_height: (a: number) => number;
    readonly preview_rgba: (a: number) => [number, number];
    readonly preview_width: (a: number) => number;
    readonly toy_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
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
