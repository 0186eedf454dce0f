#pragma once

#include <string>

#include "progsg/tape.hpp"

namespace progsg::ad {

// Binary weight checkpoint: magic, format version, parameter table
// (id, dtype, shape), then raw little-endian payloads in table order.
void save_weights(const ParamStore& ps, const std::string& path,
                  Precision dtype = Precision::f64);

// Loads into an existing store; every checkpoint entry must match a parameter
// with the same id and shape, and every parameter must be present.
void load_weights(ParamStore& ps, const std::string& path);

}  // namespace progsg::ad
