// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeSet;

/// One fifth of the layer count, rounded up.
pub fn window_size(n_layers: usize) -> usize {
    n_layers.div_ceil(5)
}

/// Layers knocked out when centering on `center`: `k = ceil(L/5)` layers,
/// ⌊k/2⌋ below the center and ⌈k/2⌉−1 above it, clipped to `[0, L)`.
pub fn knockout_window(center: usize, n_layers: usize) -> BTreeSet<usize> {
    assert!(center < n_layers, "center layer {center} outside [0, {n_layers})");
    let k = window_size(n_layers);
    let below = k / 2;
    let above = k.div_ceil(2) - 1;
    let lo = center.saturating_sub(below);
    let hi = (center + above).min(n_layers - 1);
    (lo..=hi).collect()
}
