/* tslint:disable */
/* eslint-disable */

export function sweep_phi1(phi2: number, gamma_pi: number, points: number): string;

/**
 * Runs the protocol on the exact algebra with coupler phases given as
 * multiples of pi.
 */
export function teleport(phi1: number, phi2: number, gamma_prep_pi: number, gamma_rot_pi: number): string;

/**
 * Ground-state packet in one SAW minimum for amplitude `amplitude_mev` and
 * wavelength `wavelength_nm`. Returns an error string for invalid input.
 */
export function trap(amplitude_mev: number, wavelength_nm: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly sweep_phi1: (a: number, b: number, c: number) => [number, number];
    readonly teleport: (a: number, b: number, c: number, d: number) => [number, number];
    readonly trap: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
