#include "trifuse/modality.hpp"

#include <stdexcept>

namespace trifuse {

std::string_view modality_name(ModalityId m)
{
    switch (m) {
    case ModalityId::Face:
        return "face";
    case ModalityId::Gesture:
        return "gesture";
    case ModalityId::Voice:
        return "voice";
    }
    throw std::invalid_argument("invalid modality id");
}

ModalityId parse_modality(std::string_view name)
{
    if (name == "face") {
        return ModalityId::Face;
    }
    if (name == "gesture" || name == "gest") {
        return ModalityId::Gesture;
    }
    if (name == "voice") {
        return ModalityId::Voice;
    }
    throw std::invalid_argument("unknown modality '" + std::string(name) + "'");
}

std::array<ModalityId, 2> others(ModalityId m)
{
    switch (m) {
    case ModalityId::Face:
        return {ModalityId::Gesture, ModalityId::Voice};
    case ModalityId::Gesture:
        return {ModalityId::Face, ModalityId::Voice};
    case ModalityId::Voice:
        return {ModalityId::Face, ModalityId::Gesture};
    }
    throw std::invalid_argument("invalid modality id");
}

ModalityMask ModalityMask::only(ModalityId id)
{
    return from_bits(static_cast<std::uint8_t>(1U << index_of(id)));
}

ModalityMask ModalityMask::parse(std::string_view text)
{
    if (text == "trimodal" || text == "all") {
        return all();
    }
    ModalityMask mask = from_bits(0);
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find_first_of(",+", start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        const auto token = text.substr(start, end - start);
        if (!token.empty()) {
            mask.set(parse_modality(token), true);
        }
        start = end + 1;
    }
    if (mask.empty()) {
        throw std::invalid_argument("modality mask '" + std::string(text) + "' selects nothing");
    }
    return mask;
}

void ModalityMask::set(ModalityId m, bool present)
{
    const auto bit = static_cast<std::uint8_t>(1U << index_of(m));
    bits_ = present ? (bits_ | bit) : (bits_ & ~bit);
}

std::size_t ModalityMask::count() const
{
    return static_cast<std::size_t>((bits_ & 1U) + ((bits_ >> 1) & 1U) + ((bits_ >> 2) & 1U));
}

std::string ModalityMask::label() const
{
    if (bits_ == 7) {
        return "trimodal";
    }
    if (bits_ == 0) {
        return "none";
    }
    // Face+voice is written face-first, gesture+voice gesture-first,
    // matching the usual column headers.
    std::string out;
    for (auto m : kModalities) {
        if (has(m)) {
            if (!out.empty()) {
                out += '+';
            }
            out += modality_name(m);
        }
    }
    return out;
}

const std::array<ModalityMask, 7>& evaluation_masks()
{
    static const std::array<ModalityMask, 7> masks = {
        ModalityMask(true, false, false), ModalityMask(false, true, false),
        ModalityMask(false, false, true), ModalityMask(true, false, true),
        ModalityMask(true, true, false),  ModalityMask(false, true, true),
        ModalityMask(true, true, true)};
    return masks;
}

} // namespace trifuse
