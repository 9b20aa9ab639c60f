/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demoapp_free: (a: number, b: number) => void;
export const demoapp_caption: (a: number) => [number, number];
export const demoapp_explain: (a: number, b: number, c: number, d: number) => [number, number];
export const demoapp_height: (a: number) => number;
export const demoapp_modelK: (a: number) => number;
export const demoapp_new: () => [number, number, number];
export const demoapp_occlude: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const demoapp_rgba: (a: number) => [number, number];
export const demoapp_sampleCount: (a: number) => number;
export const demoapp_sampleLabel: (a: number, b: number) => [number, number, number];
export const demoapp_segment: (a: number, b: number, c: number) => [number, number];
export const demoapp_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
