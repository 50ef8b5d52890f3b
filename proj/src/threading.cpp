#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

#include "strack/common.hpp"

namespace strack {

namespace {

// Lazily started pool; workers block on a generation counter and run the
// current loop body over their fixed chunk index.
class Pool {
public:
    static Pool& instance() {
        static Pool p;
        return p;
    }

    void resize(int n) {
        std::unique_lock lk(m_);
        target_ = std::max(1, n);
    }

    int size() {
        std::unique_lock lk(m_);
        return target_;
    }

    void run(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn) {
        int threads;
        {
            std::unique_lock lk(m_);
            threads = target_;
            if (threads > 1 && int64_t(threads) * grain > n)
                threads = std::max<int64_t>(1, n / std::max<int64_t>(grain, 1));
            if (threads > 1) start_locked(threads - 1);
        }
        if (threads <= 1) {
            fn(0, n);
            return;
        }
        int64_t chunk = (n + threads - 1) / threads;
        {
            std::unique_lock lk(m_);
            job_fn_ = &fn;
            job_n_ = n;
            job_chunk_ = chunk;
            job_threads_ = threads;
            remaining_ = threads - 1;
            ++generation_;
        }
        cv_.notify_all();
        fn(0, std::min(chunk, n));  // caller takes chunk 0
        std::unique_lock lk(m_);
        done_cv_.wait(lk, [&] { return remaining_ == 0; });
        job_fn_ = nullptr;
    }

private:
    Pool() = default;
    ~Pool() {
        {
            std::unique_lock lk(m_);
            stop_ = true;
            ++generation_;
        }
        cv_.notify_all();
        for (auto& t : workers_) t.join();
    }

    void start_locked(int want) {
        while (int(workers_.size()) < want) {
            int idx = int(workers_.size()) + 1;  // caller is chunk 0
            workers_.emplace_back([this, idx] { worker(idx); });
        }
    }

    void worker(int idx) {
        uint64_t seen = 0;
        while (true) {
            const std::function<void(int64_t, int64_t)>* fn = nullptr;
            int64_t begin = 0, end = 0;
            {
                std::unique_lock lk(m_);
                cv_.wait(lk, [&] { return generation_ != seen; });
                seen = generation_;
                if (stop_) return;
                if (job_fn_ && idx < job_threads_) {
                    fn = job_fn_;
                    begin = std::min<int64_t>(int64_t(idx) * job_chunk_, job_n_);
                    end = std::min<int64_t>(begin + job_chunk_, job_n_);
                }
            }
            if (fn) {
                if (begin < end) (*fn)(begin, end);
                std::unique_lock lk(m_);
                if (--remaining_ == 0) done_cv_.notify_all();
            }
        }
    }

    std::mutex m_;
    std::condition_variable cv_, done_cv_;
    std::vector<std::thread> workers_;
    // Default is serial: the model's kernels are small enough that pool
    // handshakes cost more than they save; --threads opts in for large runs.
    int target_ = 1;
    bool stop_ = false;
    uint64_t generation_ = 0;
    const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
    int64_t job_n_ = 0, job_chunk_ = 0;
    int job_threads_ = 0;
    int remaining_ = 0;
};

}  // namespace

int thread_count() { return Pool::instance().size(); }
void set_thread_count(int n) { Pool::instance().resize(n); }

void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    Pool::instance().run(n, grain, fn);
}

}  // namespace strack
