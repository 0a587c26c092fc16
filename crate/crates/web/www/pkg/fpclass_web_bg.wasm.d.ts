/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_greyimage_free: (a: number, b: number) => void;
export const greyimage_height: (a: number) => number;
export const greyimage_pixels: (a: number) => [number, number];
export const greyimage_width: (a: number) => number;
export const orientation_map: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const penetration_rate: (a: number, b: number) => [number, number, number, number];
export const render_fingerprint: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const singular_points: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
