#pragma once

namespace dc {

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// OS, so each training step reuses warm pages. Process-wide; call once
/// from main. No-op where glibc malloc tuning is unavailable.
void tune_allocator();

}  // namespace dc
