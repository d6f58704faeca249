/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_roc_free: (a: number, b: number) => void;
export const diCurve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const noisedRing: (a: number, b: number, c: number) => [number, number, number, number];
export const roc: (a: number, b: number, c: number) => [number, number, number];
export const roc_auc: (a: number) => number;
export const roc_fpr: (a: number) => [number, number];
export const roc_tpr: (a: number) => [number, number];
export const roc_tpr_at_1pct: (a: number) => number;
export const signalFraction: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
