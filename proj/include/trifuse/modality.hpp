#pragma once

#include "trifuse/tensor.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace trifuse {

enum class ModalityId : std::uint8_t { Face = 0, Gesture = 1, Voice = 2 };

inline constexpr std::size_t kModalityCount = 3;
inline constexpr std::array<ModalityId, kModalityCount> kModalities = {
    ModalityId::Face, ModalityId::Gesture, ModalityId::Voice};

/// Raw encoder embedding sizes: face 512, gesture 768, voice 256.
inline constexpr std::array<Index, kModalityCount> kDefaultInputDims = {512, 768, 256};

constexpr std::size_t index_of(ModalityId m) { return static_cast<std::size_t>(m); }

std::string_view modality_name(ModalityId m);
ModalityId parse_modality(std::string_view name);

/// The two modalities other than `m`, in canonical order.
std::array<ModalityId, 2> others(ModalityId m);

/// Which modalities are present for a sample or evaluation condition.
class ModalityMask {
public:
    constexpr ModalityMask() = default;
    constexpr ModalityMask(bool face, bool gesture, bool voice)
        : bits_(static_cast<std::uint8_t>((face ? 1 : 0) | (gesture ? 2 : 0) | (voice ? 4 : 0)))
    {
    }

    static constexpr ModalityMask all() { return {true, true, true}; }
    static constexpr ModalityMask from_bits(std::uint8_t bits)
    {
        ModalityMask m;
        m.bits_ = bits & 7U;
        return m;
    }
    static ModalityMask only(ModalityId id);
    /// Comma-separated names, e.g. "face,voice". Also accepts "trimodal"/"all".
    static ModalityMask parse(std::string_view text);

    constexpr bool has(ModalityId m) const { return (bits_ >> index_of(m)) & 1U; }
    void set(ModalityId m, bool present);
    constexpr bool empty() const { return bits_ == 0; }
    constexpr std::uint8_t bits() const { return bits_; }
    std::size_t count() const;

    /// Table label: "face", "face+voice", "trimodal", ...
    std::string label() const;

    friend constexpr bool operator==(ModalityMask a, ModalityMask b) { return a.bits_ == b.bits_; }

private:
    std::uint8_t bits_ = 7;
};

/// The seven non-empty availability conditions, in report column order:
/// face, gesture, voice, face+voice, face+gesture, gesture+voice, trimodal.
const std::array<ModalityMask, 7>& evaluation_masks();

} // namespace trifuse
