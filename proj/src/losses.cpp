#include "nla/losses.hpp"

#include <string>

namespace nla {

std::string_view to_string(LossMode mode) {
    switch (mode) {
    case LossMode::CE:
        return "ce";
    case LossMode::NAW:
        return "naw";
    case LossMode::NLA:
        return "nla";
    }
    return "unknown";
}

LossMode parse_loss_mode(std::string_view text) {
    if (text == "ce")
        return LossMode::CE;
    if (text == "naw" || text == "naw-ce")
        return LossMode::NAW;
    if (text == "nla" || text == "naw-ce+reg")
        return LossMode::NLA;
    throw std::invalid_argument("unknown loss mode '" + std::string(text) + "' (expected ce, naw or nla)");
}

} // namespace nla
