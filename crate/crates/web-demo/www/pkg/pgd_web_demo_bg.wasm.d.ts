/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_preview_free: (a: number, b: number) => void;
export const dataset_preview: (a: number, b: bigint, c: number, d: number) => [number, number, number];
export const gradnorm_histogram: (a: number, b: bigint, c: number, d: number, e: number) => [number, number, number, number];
export const preview_height: (a: number) => number;
export const preview_rgba: (a: number) => [number, number];
export const preview_width: (a: number) => number;
export const toy_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
