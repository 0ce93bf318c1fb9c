// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace afm {

/// Keeps large tensor buffers (im2col, activations) on the heap between
/// steps instead of returning them to the OS, which otherwise costs a page
/// fault per touched page on every reallocation. No-op outside glibc.
/// Call once at program start, before any tensors exist.
void tune_allocator();

}  // namespace afm
