#include "voxreg/tensor.hpp"

#include <sstream>

namespace voxreg {

void shape_error(const std::string& what) {
  throw std::invalid_argument("shape error: " + what);
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

}  // namespace voxreg
