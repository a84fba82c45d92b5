#pragma once

#include <map>
#include <string>

#include "fedharness/protocol.hpp"

namespace fedharness {

constexpr int kPromptTemplateVersion = 1;

// Fills {name} placeholders; unknown placeholders are left verbatim so a
// missing variable is visible in the rendered text instead of hidden.
std::string render_template(const std::string& tmpl,
                            const std::map<std::string, std::string>& vars);

// Mode-specific instruction text. Everything outside this block is shared
// between the two guidance modes, so prompt deltas isolate the guidance.
std::string guidance_text(Role kind, Phase phase, GuidanceMode mode);

// Full role prompt template for one (role, phase) slot, placeholders intact.
std::string prompt_template(Role kind, Phase phase, GuidanceMode mode);

}  // namespace fedharness
