#include "priorlens/tensor.hpp"

#include <sstream>

namespace priorlens {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ')';
  return os.str();
}

}  // namespace priorlens
