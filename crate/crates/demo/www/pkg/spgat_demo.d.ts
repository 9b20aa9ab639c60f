/* tslint:disable */
/* eslint-disable */

export class DemoApp {
    free(): void;
    [Symbol.dispose](): void;
    caption(): string;
    explain(sample: number, method: string): void;
    height(): number;
    modelK(): number;
    constructor();
    occlude(sample: number, method: string, threshold: number): void;
    rgba(): Uint8Array;
    sampleCount(): number;
    sampleLabel(sample: number): number;
    segment(sample: number, k: number): void;
    width(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demoapp_free: (a: number, b: number) => void;
    readonly demoapp_caption: (a: number) => [number, number];
    readonly demoapp_explain: (a: number, b: number, c: number, d: number) => [number, number];
    readonly demoapp_height: (a: number) => number;
    readonly demoapp_modelK: (a: number) => number;
    readonly demoapp_new: () => [number, number, number];
    readonly demoapp_occlude: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly demoapp_rgba: (a: number) => [number, number];
    readonly demoapp_sampleCount: (a: number) => number;
    readonly demoapp_sampleLabel: (a: number, b: number) => [number, number, number];
    readonly demoapp_segment: (a: number, b: number, c: number) => [number, number];
    readonly demoapp_width: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
