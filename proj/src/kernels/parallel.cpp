#include "capsed/kernels/parallel.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace capsed::kernels {

namespace {

std::size_t default_threads() {
    if (const char* env = std::getenv("CAPSED_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v >= 0) return static_cast<std::size_t>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return std::min<std::size_t>(hw == 0 ? 1 : hw, 8);
}

std::size_t g_threads = default_threads();
constexpr std::size_t kMaxWorkers = 15;  // +1 caller slice

// Persistent pool. Workers block on a generation counter; each parallel_for
// bumps the generation, workers take their static slice, the caller takes
// slice 0 and waits for the rest. One region runs at a time (callers are on
// the single tape thread). Slices beyond the requested part count are empty,
// so shrinking CAPSED_THREADS later still takes effect.
class Pool {
public:
    explicit Pool(std::size_t workers) {
        for (std::size_t w = 0; w < workers; ++w)
            threads_.emplace_back([this, w] { worker_loop(w); });
    }

    std::size_t workers() const { return threads_.size(); }

    void run(std::size_t n, std::size_t parts,
             const std::function<void(std::size_t, std::size_t)>& fn) {
        {
            std::lock_guard<std::mutex> lk(m_);
            fn_ = &fn;
            n_ = n;
            parts_ = parts;
            pending_ = threads_.size();
            ++generation_;
        }
        cv_.notify_all();
        run_slice(0, parts, n, fn);
        std::unique_lock<std::mutex> lk(m_);
        done_cv_.wait(lk, [this] { return pending_ == 0; });
        fn_ = nullptr;
    }

private:
    static void run_slice(std::size_t slice, std::size_t parts, std::size_t n,
                          const std::function<void(std::size_t, std::size_t)>& fn) {
        if (slice >= parts) return;
        const std::size_t chunk = (n + parts - 1) / parts;
        const std::size_t begin = std::min(n, slice * chunk);
        const std::size_t end = std::min(n, begin + chunk);
        if (begin < end) fn(begin, end);
    }

    void worker_loop(std::size_t w) {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(std::size_t, std::size_t)>* fn = nullptr;
            std::size_t n = 0, parts = 0;
            {
                std::unique_lock<std::mutex> lk(m_);
                cv_.wait(lk, [&] { return generation_ != seen; });
                seen = generation_;
                fn = fn_;
                n = n_;
                parts = parts_;
            }
            if (fn) run_slice(w + 1, parts, n, *fn);
            {
                std::lock_guard<std::mutex> lk(m_);
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    std::vector<std::thread> threads_;
    std::mutex m_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void(std::size_t, std::size_t)>* fn_ = nullptr;
    std::size_t n_ = 0;
    std::size_t parts_ = 0;
    std::size_t pending_ = 0;
    std::uint64_t generation_ = 0;
};

Pool& pool_instance() {
    // Detached workers; leaked deliberately so exit order cannot deadlock.
    static Pool* pool = new Pool(std::min(kMaxWorkers, std::max<std::size_t>(g_threads, 1) - 1));
    return *pool;
}

}  // namespace

std::size_t thread_count() { return g_threads; }

void set_thread_count(std::size_t n) { g_threads = n; }

void parallel_for(std::size_t n, std::size_t min_per_thread,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t threads = std::max<std::size_t>(1, g_threads);
    const std::size_t by_grain =
        min_per_thread ? std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_per_thread)) : n;
    const std::size_t parts = std::min(threads, by_grain);
    if (parts <= 1) {
        fn(0, n);
        return;
    }
    Pool& pool = pool_instance();
    pool.run(n, std::min(parts, pool.workers() + 1), fn);
}

}  // namespace capsed::kernels
