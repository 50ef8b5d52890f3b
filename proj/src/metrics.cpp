#include "strack/metrics.hpp"

#include <cmath>

namespace strack {

FlowMetrics flow_metrics(const Tensor& pred_flow, const Tensor& pred_vis_prob,
                         const Tensor& gt_flow, const Tensor& gt_vis) {
    if (pred_flow.shape() != gt_flow.shape() || pred_flow.ndim() != 3 || pred_flow.dim(0) != 2)
        throw ShapeError("flow_metrics: flow shape mismatch");
    if (gt_vis.ndim() != 3 || gt_vis.dim(1) != gt_flow.dim(1) || gt_vis.dim(2) != gt_flow.dim(2))
        throw ShapeError("flow_metrics: visibility shape mismatch");
    int64_t hw = int64_t(gt_flow.dim(1)) * gt_flow.dim(2);
    double sum_all = 0, sum_vis = 0, sum_occ = 0;
    int64_t n_vis = 0, n_occ = 0;
    for (int64_t i = 0; i < hw; ++i) {
        double du = pred_flow.value_at(i) - gt_flow.value_at(i);
        double dv = pred_flow.value_at(hw + i) - gt_flow.value_at(hw + i);
        double e = std::sqrt(du * du + dv * dv);
        sum_all += e;
        if (gt_vis.value_at(i) > 0.5) {
            sum_vis += e;
            ++n_vis;
        } else {
            sum_occ += e;
            ++n_occ;
        }
    }
    FlowMetrics m;
    m.epe_all = sum_all / double(hw);
    if (n_vis) m.epe_vis = sum_vis / double(n_vis);
    if (n_occ) m.epe_occ = sum_occ / double(n_occ);
    if (pred_vis_prob.defined()) {
        if (pred_vis_prob.numel() != hw) throw ShapeError("flow_metrics: pred_vis shape mismatch");
        int64_t correct = 0;
        for (int64_t i = 0; i < hw; ++i) {
            bool pv = pred_vis_prob.value_at(i) > 0.5;
            bool gv = gt_vis.value_at(i) > 0.5;
            if (pv == gv) ++correct;
        }
        m.oa = double(correct) / double(hw);
    }
    return m;
}

TapMetrics tap_metrics(const std::vector<QueryTrack>& pred, const std::vector<QueryTrack>& gt,
                       const std::vector<double>& thresholds) {
    if (pred.size() != gt.size()) throw ShapeError("tap_metrics: query count mismatch");
    if (pred.empty()) throw ContractError("tap_metrics: no queries");
    size_t T = gt.front().pos.size();
    for (size_t q = 0; q < pred.size(); ++q)
        if (pred[q].pos.size() != T || gt[q].pos.size() != T || pred[q].occluded.size() != T ||
            gt[q].occluded.size() != T)
            throw ShapeError("tap_metrics: track length mismatch");

    int64_t n_gt_visible = 0, oa_correct = 0, scored = 0;
    for (size_t q = 0; q < gt.size(); ++q)
        for (size_t t = 1; t < T; ++t) {  // query frame excluded
            ++scored;
            if (!gt[q].occluded[t]) ++n_gt_visible;
            if (pred[q].occluded[t] == gt[q].occluded[t]) ++oa_correct;
        }
    if (scored == 0) throw ContractError("tap_metrics: tracks have no scored frames");
    if (n_gt_visible == 0) throw ContractError("tap_metrics: no visible ground-truth points");

    TapMetrics m;
    m.oa = double(oa_correct) / double(scored);
    double frac_sum = 0, jac_sum = 0;
    for (double thr : thresholds) {
        int64_t within_visible = 0, tp = 0, fp = 0, fn = 0;
        for (size_t q = 0; q < gt.size(); ++q)
            for (size_t t = 1; t < T; ++t) {
                double dx = pred[q].pos[t].first - gt[q].pos[t].first;
                double dy = pred[q].pos[t].second - gt[q].pos[t].second;
                bool within = dx * dx + dy * dy <= thr * thr;
                bool gv = !gt[q].occluded[t];
                bool pv = !pred[q].occluded[t];
                if (gv && within) ++within_visible;
                if (gv && pv && within)
                    ++tp;
                else {
                    if (pv) ++fp;        // predicted visible but occluded or off target
                    if (gv) ++fn;        // visible in truth but missed
                }
            }
        frac_sum += double(within_visible) / double(n_gt_visible);
        int64_t denom = tp + fp + fn;
        jac_sum += denom ? double(tp) / double(denom) : 1.0;
    }
    m.delta_avg = frac_sum / double(thresholds.size());
    m.aj = jac_sum / double(thresholds.size());
    return m;
}

std::vector<QueryTrack> dense_to_queries(const std::vector<Tensor>& flow_stack,
                                         const std::vector<Tensor>& vis_prob_stack,
                                         const std::vector<std::pair<double, double>>& queries) {
    if (flow_stack.empty() || flow_stack.size() != vis_prob_stack.size())
        throw ShapeError("dense_to_queries: stack size mismatch");
    int H = flow_stack[0].dim(1), W = flow_stack[0].dim(2);
    for (auto& [qx, qy] : queries)
        if (qx < 0 || qx > W - 1 || qy < 0 || qy > H - 1)
            throw ContractError("dense_to_queries: query (" + std::to_string(qx) + "," +
                                std::to_string(qy) + ") lies outside the frame");

    auto sample = [&](const Tensor& grid, int c, double x, double y) {
        int64_t hw = int64_t(H) * W;
        int x0 = int(std::floor(x)), y0 = int(std::floor(y));
        double fx = x - x0, fy = y - y0;
        double acc = 0;
        for (int jy = 0; jy < 2; ++jy)
            for (int jx = 0; jx < 2; ++jx) {
                int xx = x0 + jx, yy = y0 + jy;
                if (xx < 0 || xx >= W || yy < 0 || yy >= H) continue;
                acc += (jx ? fx : 1 - fx) * (jy ? fy : 1 - fy) *
                       grid.value_at(c * hw + int64_t(yy) * W + xx);
            }
        return acc;
    };

    std::vector<QueryTrack> tracks(queries.size());
    for (size_t q = 0; q < queries.size(); ++q) {
        auto [qx, qy] = queries[q];
        for (size_t t = 0; t < flow_stack.size(); ++t) {
            double u = sample(flow_stack[t], 0, qx, qy);
            double v = sample(flow_stack[t], 1, qx, qy);
            double p = sample(vis_prob_stack[t], 0, qx, qy);
            tracks[q].pos.push_back({qx + u, qy + v});
            tracks[q].occluded.push_back(p <= 0.5);
        }
    }
    return tracks;
}

}  // namespace strack
