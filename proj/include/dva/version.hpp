#pragma once

// DVA_GIT_REV is injected by the build; manifests carry it so result files
// can be traced back to the exact tree that produced them.
#ifndef DVA_GIT_REV
#define DVA_GIT_REV "untracked"
#endif

namespace dva {

inline const char* version_string() { return "dva-lab 0.1.0+g" DVA_GIT_REV; }

}  // namespace dva
