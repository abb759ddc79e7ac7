#pragma once

namespace mvs {
const char* version();
}
