/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const best_of_n: (a: number, b: number, c: bigint) => [number, number];
export const probe_demo: (a: number, b: number, c: number, d: number, e: bigint) => [number, number];
export const steer_demo: (a: number, b: number, c: bigint) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
