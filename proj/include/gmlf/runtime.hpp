#pragma once

// Process-level allocator tuning for executables. Training allocates and
// frees many multi-megabyte buffers per iteration; with glibc's defaults each
// one is a fresh mmap and page-faults on first touch.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace gmlf {

inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace gmlf
