#include "diffin/common.hpp"

#include <algorithm>
#include <cstdio>

namespace diffin {

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t lo, std::size_t hi,
                                                         std::size_t k) {
    if (hi < lo || k > hi - lo) throw InputError("sample_without_replacement: k exceeds range");
    // partial Fisher-Yates over the index range
    std::vector<std::size_t> pool(hi - lo);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = lo + i;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + uniform_index(pool.size() - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

std::string hash_hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace diffin
