#ifndef RGBD_WORKQUEUE_HPP
#define RGBD_WORKQUEUE_HPP

#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>

namespace rgbd {

// Bounded FIFO used by the data loader. Producers block when full; pop
// returns nullopt once the queue is closed and drained.
template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(size_t capacity) : cap_(capacity) {}

    void push(T v) {
        std::unique_lock<std::mutex> lk(m_);
        cv_space_.wait(lk, [&] { return q_.size() < cap_ || closed_; });
        if (closed_) return;
        q_.push_back(std::move(v));
        cv_item_.notify_one();
    }

    std::optional<T> pop() {
        std::unique_lock<std::mutex> lk(m_);
        cv_item_.wait(lk, [&] { return !q_.empty() || closed_; });
        if (q_.empty()) return std::nullopt;
        T v = std::move(q_.front());
        q_.pop_front();
        cv_space_.notify_one();
        return v;
    }

    void close() {
        std::lock_guard<std::mutex> lk(m_);
        closed_ = true;
        cv_item_.notify_all();
        cv_space_.notify_all();
    }

private:
    std::mutex m_;
    std::condition_variable cv_item_, cv_space_;
    std::deque<T> q_;
    size_t cap_;
    bool closed_ = false;
};

}  // namespace rgbd

#endif
