#pragma once

namespace pwtp {

/// Keeps large tensor buffers in the heap between training steps instead of
/// returning them to the OS, which otherwise costs a page fault per touched
/// page on every step. No-op outside glibc. Call once at program start.
void configure_allocator();

}  // namespace pwtp
