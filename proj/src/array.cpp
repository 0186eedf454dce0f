#include "progsg/array.hpp"

#include <sstream>

namespace progsg::ad {

std::string Array::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void Array::round_to_f32() {
  for (double& x : data) x = static_cast<double>(static_cast<float>(x));
}

}  // namespace progsg::ad
