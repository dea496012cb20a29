/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const bound_profile: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const keps_search: (a: number, b: number, c: number, d: number) => [number, number];
export const recover_demo: (a: number, b: number, c: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
