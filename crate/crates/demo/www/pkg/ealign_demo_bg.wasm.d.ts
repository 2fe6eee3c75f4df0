/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_emergentrun_free: (a: number, b: number) => void;
export const emergent_run: (a: number, b: number, c: number) => [number, number, number];
export const emergentrun_audio_image_r1: (a: number) => number;
export const emergentrun_chance: (a: number) => number;
export const emergentrun_k: (a: number) => number;
export const emergentrun_language_r_avg: (a: number) => [number, number];
export const emergentrun_languages: (a: number) => [number, number];
export const emergentrun_similarity: (a: number) => [number, number];
export const emergentrun_untrained_r1: (a: number) => number;
export const emergentrun_untrained_similarity: (a: number) => [number, number];
export const lr_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const mask_grid: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
