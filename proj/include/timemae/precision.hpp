#pragma once

// The library is compiled twice: the float build drives training and the
// double build (TIMEMAE_REAL64) backs the finite-difference oracles. Each
// build lives in its own inline namespace so both can be linked together.

#ifdef TIMEMAE_REAL64
#define TIMEMAE_BEGIN_NAMESPACE \
  namespace timemae {           \
  inline namespace f64 {
#else
#define TIMEMAE_BEGIN_NAMESPACE \
  namespace timemae {           \
  inline namespace f32 {
#endif
#define TIMEMAE_END_NAMESPACE \
  }                           \
  }

TIMEMAE_BEGIN_NAMESPACE

#ifdef TIMEMAE_REAL64
using Real = double;
#else
using Real = float;
#endif

TIMEMAE_END_NAMESPACE
