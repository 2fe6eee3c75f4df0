/* tslint:disable */
/* eslint-disable */

/**
 * Outcome of a miniature two-stage run.
 */
export class EmergentRun {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Audio→text R@Avg per language.
     */
    language_r_avg(): Float64Array;
    /**
     * Language names joined by commas, in sweep order.
     */
    languages(): string;
    /**
     * Row-major audio × image cosine similarities after training.
     */
    similarity(): Float64Array;
    /**
     * The same for an untrained audio encoder.
     */
    untrained_similarity(): Float64Array;
    readonly audio_image_r1: number;
    readonly chance: number;
    /**
     * Side of the similarity matrices (first `k` test items).
     */
    readonly k: number;
    readonly untrained_r1: number;
}

export function emergent_run(seed: number, epochs: number, k: number): EmergentRun;

export function lr_curve(total_steps: number, warmup_fraction: number, max_lr: number, min_lr: number): Float64Array;

export function mask_grid(frames: number, channels: number, freq_mask_param: number, time_mask_param: number, num_masks: number, time_mask_ratio: number, seed: number): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_emergentrun_free: (a: number, b: number) => void;
    readonly emergent_run: (a: number, b: number, c: number) => [number, number, number];
    readonly emergentrun_audio_image_r1: (a: number) => number;
    readonly emergentrun_chance: (a: number) => number;
    readonly emergentrun_k: (a: number) => number;
    readonly emergentrun_language_r_avg: (a: number) => [number, number];
    readonly emergentrun_languages: (a: number) => [number, number];
    readonly emergentrun_similarity: (a: number) => [number, number];
    readonly emergentrun_untrained_r1: (a: number) => number;
    readonly emergentrun_untrained_similarity: (a: number) => [number, number];
    readonly lr_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly mask_grid: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
