#pragma once

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace flexfleet {

/// Discretization of the scheduling window: T equal slots of step_hours each.
/// T is capped at 64 so slot subsets fit in one machine word.
struct TimeHorizon {
    int num_steps = 24;
    double step_hours = 1.0;

    void validate() const {
        if (num_steps < 1 || num_steps > 64)
            throw std::invalid_argument("TimeHorizon: num_steps must be in [1, 64], got " +
                                        std::to_string(num_steps));
        if (!(step_hours > 0.0))
            throw std::invalid_argument("TimeHorizon: step_hours must be positive");
    }

    uint64_t full_mask() const {
        return num_steps >= 64 ? ~uint64_t{0} : ((uint64_t{1} << num_steps) - 1);
    }

    bool operator==(const TimeHorizon&) const = default;
};

/// A subset of the slots {1, ..., T}, stored as a bitmask (slot k <-> bit k-1).
/// Slot indices are 1-based at the API surface to match instance files.
class TimeSet {
public:
    constexpr TimeSet() = default;
    constexpr explicit TimeSet(uint64_t bits) : bits_(bits) {}

    static TimeSet full(int num_steps) {
        return TimeSet(num_steps >= 64 ? ~uint64_t{0} : ((uint64_t{1} << num_steps) - 1));
    }

    static TimeSet single(int slot) {  // 1-based
        if (slot < 1 || slot > 64) throw std::invalid_argument("TimeSet: slot out of range");
        return TimeSet(uint64_t{1} << (slot - 1));
    }

    static TimeSet from_slots(const std::vector<int>& slots, int num_steps) {
        uint64_t bits = 0;
        for (int s : slots) {
            if (s < 1 || s > num_steps)
                throw std::invalid_argument("TimeSet: slot index " + std::to_string(s) +
                                            " outside [1, " + std::to_string(num_steps) + "]");
            bits |= uint64_t{1} << (s - 1);
        }
        return TimeSet(bits);
    }

    uint64_t bits() const { return bits_; }
    int count() const { return std::popcount(bits_); }
    bool empty() const { return bits_ == 0; }
    bool contains(int slot) const { return slot >= 1 && slot <= 64 && (bits_ >> (slot - 1)) & 1; }
    bool is_subset_of(TimeSet other) const { return (bits_ & ~other.bits_) == 0; }

    TimeSet intersect(TimeSet other) const { return TimeSet(bits_ & other.bits_); }
    TimeSet unite(TimeSet other) const { return TimeSet(bits_ | other.bits_); }
    TimeSet minus(TimeSet other) const { return TimeSet(bits_ & ~other.bits_); }
    TimeSet complement(int num_steps) const {
        return TimeSet(~bits_ & TimeSet::full(num_steps).bits_);
    }

    /// 1-based indices, ascending.
    std::vector<int> slots() const {
        std::vector<int> out;
        out.reserve(static_cast<size_t>(count()));
        uint64_t b = bits_;
        while (b) {
            out.push_back(std::countr_zero(b) + 1);
            b &= b - 1;
        }
        return out;
    }

    /// Calls f(slot) for each member, slot 1-based ascending.
    template <class F>
    void for_each(F&& f) const {
        uint64_t b = bits_;
        while (b) {
            f(std::countr_zero(b) + 1);
            b &= b - 1;
        }
    }

    bool operator==(const TimeSet&) const = default;
    // Orders by bitmask value; used for deterministic tie-breaking.
    bool operator<(const TimeSet& other) const { return bits_ < other.bits_; }

private:
    uint64_t bits_ = 0;
};

}  // namespace flexfleet
