#pragma once

namespace ltr {

// Package version plus `git describe` of the source tree at configure time.
const char* version();

}  // namespace ltr
