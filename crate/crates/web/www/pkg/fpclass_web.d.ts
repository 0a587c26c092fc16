/* tslint:disable */
/* eslint-disable */

/**
 * Grey image handed to JavaScript.
 */
export class GreyImage {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly height: number;
    /**
     * Row-major grey levels.
     */
    readonly pixels: Uint8Array;
    readonly width: number;
}

export function orientation_map(pixels: Uint8Array, width: number, height: number): Float64Array;

export function penetration_rate(counts: Float64Array): Float64Array;

export function render_fingerprint(_class: string, quality: string, seed: number, size: string): GreyImage;

export function singular_points(pixels: Uint8Array, width: number, height: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_greyimage_free: (a: number, b: number) => void;
    readonly greyimage_height: (a: number) => number;
    readonly greyimage_pixels: (a: number) => [number, number];
    readonly greyimage_width: (a: number) => number;
    readonly orientation_map: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly penetration_rate: (a: number, b: number) => [number, number, number, number];
    readonly render_fingerprint: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly singular_points: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
