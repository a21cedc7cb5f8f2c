/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const clip_demo: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const clt_explorer: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const tradeoff_demo: (a: number, b: number, c: bigint) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
