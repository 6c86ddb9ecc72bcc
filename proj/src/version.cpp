#include "ltr/version.hpp"

#ifndef LTR_VERSION_STRING
#define LTR_VERSION_STRING "0.1.0"
#endif

namespace ltr {

const char* version() { return LTR_VERSION_STRING; }

}  // namespace ltr
