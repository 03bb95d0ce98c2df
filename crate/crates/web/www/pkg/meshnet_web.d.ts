/* tslint:disable */
/* eslint-disable */

/**
 * A decimated, normalized shape ready to be drawn and probed.
 */
export class Scene {
    free(): void;
    [Symbol.dispose](): void;
    faceCount(): number;
    /**
     * Face count of the shape before decimation.
     */
    inputFaces(): number;
    /**
     * RGB bytes per face for the kernel correlation field.
     */
    kernelField(theta: number, phi: number, sigma: number): Uint8Array;
    /**
     * The raw field values, for the range readout.
     */
    kernelValues(theta: number, phi: number, sigma: number): Float64Array;
    constructor(name: string, budget: number);
    /**
     * Nine coordinates per face.
     */
    triangles(): Float32Array;
}

/**
 * Correlation of one normal with one kernel vector as the angle between
 * them sweeps `[0, π]` in `samples` steps.
 */
export function kernelProfile(sigma: number, samples: number): Float64Array;

export function shapeNames(): string[];

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly kernelProfile: (a: number, b: number) => [number, number];
    readonly scene_faceCount: (a: number) => number;
    readonly scene_inputFaces: (a: number) => number;
    readonly scene_kernelField: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly scene_kernelValues: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly scene_new: (a: number, b: number, c: number) => [number, number, number];
    readonly scene_triangles: (a: number) => [number, number];
    readonly shapeNames: () => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_drop_slice: (a: number, b: number) => void;
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
