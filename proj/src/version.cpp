#include "version.hpp"

namespace mvs {
const char* version() { return "1.0.0"; }
}
