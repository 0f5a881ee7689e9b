#pragma once

namespace blockmem {

// Engine-wide floating-point precision, fixed at build configuration
// (BLOCKMEM_PRECISION cmake option).
#if defined(BLOCKMEM_PRECISION_DOUBLE)
using Real = double;
#else
using Real = float;
#endif

}  // namespace blockmem
