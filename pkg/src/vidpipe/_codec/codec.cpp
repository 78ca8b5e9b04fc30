// Thin libav* wrapper: container probe, seek+decode with work counters,
// YUV->RGB crop/flip/scale with a pinned scaler, H.264 encode, and
// packet-copy remux cuts. All pixel math funnels through one conversion
// routine so the fused and reference decode paths are byte-identical by
// construction.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>

#include <algorithm>
#include <atomic>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

extern "C" {
#include <libavcodec/avcodec.h>
#include <libavformat/avformat.h>
#include <libavutil/imgutils.h>
#include <libavutil/opt.h>
#include <libswscale/swscale.h>
}

namespace py = pybind11;

// Pinned scaler configuration: bilinear with accurate rounding. Changing
// this breaks the fused==reference byte-equality contract.
static const int kSwsFlags = SWS_BILINEAR | SWS_ACCURATE_RND;

// Process-wide count of frames handed back by any decoder. Lets tests prove
// that metadata probes never reach a decoder.
static std::atomic<int64_t> g_frames_decoded{0};

static std::string averr(int err) {
    char buf[AV_ERROR_MAX_STRING_SIZE] = {0};
    av_strerror(err, buf, sizeof(buf));
    return std::string(buf);
}

static void check(int err, const std::string& what) {
    if (err < 0) throw std::runtime_error(what + ": " + averr(err));
}

// ---------------------------------------------------------------------------
// In-memory AVIO (decode from bytes, for preloaded corpora)
// ---------------------------------------------------------------------------

struct MemIO {
    const uint8_t* data = nullptr;
    int64_t size = 0;
    int64_t pos = 0;
    py::bytes keepalive;  // owns the buffer for the reader's lifetime
};

static int memio_read(void* opaque, uint8_t* buf, int n) {
    MemIO* m = static_cast<MemIO*>(opaque);
    int64_t left = m->size - m->pos;
    if (left <= 0) return AVERROR_EOF;
    int take = static_cast<int>(std::min<int64_t>(n, left));
    memcpy(buf, m->data + m->pos, take);
    m->pos += take;
    return take;
}

static int64_t memio_seek(void* opaque, int64_t offset, int whence) {
    MemIO* m = static_cast<MemIO*>(opaque);
    if (whence == AVSEEK_SIZE) return m->size;
    int64_t target;
    switch (whence & ~AVSEEK_FORCE) {
        case SEEK_SET: target = offset; break;
        case SEEK_CUR: target = m->pos + offset; break;
        case SEEK_END: target = m->size + offset; break;
        default: return AVERROR(EINVAL);
    }
    if (target < 0 || target > m->size) return AVERROR(EINVAL);
    m->pos = target;
    return target;
}

struct InputHandle {
    AVFormatContext* fmt = nullptr;
    AVIOContext* avio = nullptr;
    std::unique_ptr<MemIO> mem;

    void open(py::object src) {
        fmt = avformat_alloc_context();
        if (!fmt) throw std::runtime_error("open: alloc failed");
        std::string path = "<memory>";
        if (py::isinstance<py::bytes>(src)) {
            mem = std::make_unique<MemIO>();
            mem->keepalive = src.cast<py::bytes>();
            char* ptr = nullptr;
            Py_ssize_t len = 0;
            PyBytes_AsStringAndSize(mem->keepalive.ptr(), &ptr, &len);
            mem->data = reinterpret_cast<const uint8_t*>(ptr);
            mem->size = len;
            const int bufsize = 1 << 16;
            uint8_t* io_buf = static_cast<uint8_t*>(av_malloc(bufsize));
            avio = avio_alloc_context(io_buf, bufsize, 0, mem.get(),
                                      memio_read, nullptr, memio_seek);
            if (!avio) throw std::runtime_error("open: avio alloc failed");
            fmt->pb = avio;
            fmt->flags |= AVFMT_FLAG_CUSTOM_IO;
        } else {
            path = src.cast<std::string>();
        }
        int err = avformat_open_input(&fmt, mem ? nullptr : path.c_str(),
                                      nullptr, nullptr);
        if (err < 0) {
            // avformat_open_input frees fmt on failure
            fmt = nullptr;
            free_io();
            throw std::runtime_error("open '" + path + "': " + averr(err));
        }
    }

    void free_io() {
        if (avio) {
            av_freep(&avio->buffer);
            avio_context_free(&avio);
        }
        mem.reset();
    }

    void close() {
        if (fmt) avformat_close_input(&fmt);
        free_io();
    }

    ~InputHandle() { close(); }
};

static int find_video_stream(AVFormatContext* fmt) {
    int idx = av_find_best_stream(fmt, AVMEDIA_TYPE_VIDEO, -1, -1, nullptr, 0);
    if (idx < 0) throw std::runtime_error("no video stream found");
    return idx;
}

// ---------------------------------------------------------------------------
// probe: container metadata only, no frame is ever sent to a decoder
// ---------------------------------------------------------------------------

static py::dict probe(py::object src) {
    InputHandle in;
    in.open(src);
    AVFormatContext* fmt = in.fmt;
    // MP4 carries stream parameters in the container header; only fall back
    // to find_stream_info when the demuxer left them unset.
    int idx;
    try {
        idx = find_video_stream(fmt);
    } catch (const std::runtime_error&) {
        idx = -1;
    }
    AVStream* st = idx >= 0 ? fmt->streams[idx] : nullptr;
    if (!st || st->codecpar->width <= 0) {
        check(avformat_find_stream_info(fmt, nullptr), "probe: stream info");
        idx = find_video_stream(fmt);
        st = fmt->streams[idx];
    }
    AVCodecParameters* par = st->codecpar;
    double tb = av_q2d(st->time_base);
    double duration = 0.0;
    if (st->duration != AV_NOPTS_VALUE)
        duration = st->duration * tb;
    else if (fmt->duration != AV_NOPTS_VALUE)
        duration = fmt->duration / static_cast<double>(AV_TIME_BASE);
    AVRational fr = st->avg_frame_rate.num > 0 ? st->avg_frame_rate
                                               : st->r_frame_rate;
    const AVCodecDescriptor* desc = avcodec_descriptor_get(par->codec_id);

    py::dict d;
    d["width"] = par->width;
    d["height"] = par->height;
    d["duration"] = duration;
    d["fps"] = fr.den > 0 ? av_q2d(fr) : 0.0;
    d["codec"] = desc ? desc->name : "unknown";
    d["bit_rate"] = par->bit_rate > 0 ? par->bit_rate : fmt->bit_rate;
    d["nb_frames"] = st->nb_frames;
    d["start_time"] =
        st->start_time != AV_NOPTS_VALUE ? st->start_time * tb : 0.0;
    return d;
}

// ---------------------------------------------------------------------------
// Shared YUV420 -> RGB24 conversion (crop already applied by the caller via
// plane pointers/strides; optional horizontal flip happens here, before the
// scale, so both decode paths order the ops identically)
// ---------------------------------------------------------------------------

struct PlaneView {
    const uint8_t* y;
    const uint8_t* u;
    const uint8_t* v;
    int ls_y, ls_u, ls_v;
    int w, h;  // luma geometry
};

static void hflip_planes(const PlaneView& src, std::vector<uint8_t>& buf,
                         PlaneView& out) {
    int cw = (src.w + 1) / 2, ch = (src.h + 1) / 2;
    buf.resize(static_cast<size_t>(src.w) * src.h + 2ul * cw * ch);
    uint8_t* yd = buf.data();
    uint8_t* ud = yd + static_cast<size_t>(src.w) * src.h;
    uint8_t* vd = ud + static_cast<size_t>(cw) * ch;
    for (int r = 0; r < src.h; ++r) {
        const uint8_t* s = src.y + static_cast<int64_t>(r) * src.ls_y;
        uint8_t* d = yd + static_cast<int64_t>(r) * src.w;
        for (int c = 0; c < src.w; ++c) d[c] = s[src.w - 1 - c];
    }
    for (int r = 0; r < ch; ++r) {
        const uint8_t* su = src.u + static_cast<int64_t>(r) * src.ls_u;
        const uint8_t* sv = src.v + static_cast<int64_t>(r) * src.ls_v;
        uint8_t* du = ud + static_cast<int64_t>(r) * cw;
        uint8_t* dv = vd + static_cast<int64_t>(r) * cw;
        for (int c = 0; c < cw; ++c) {
            du[c] = su[cw - 1 - c];
            dv[c] = sv[cw - 1 - c];
        }
    }
    out = {yd, ud, vd, src.w, cw, cw, src.w, src.h};
}

// dst must hold th*tw*3 bytes. ctx_cache may be null (one-shot context).
static void convert_to_rgb(const PlaneView& view, bool hflip, int tw, int th,
                           uint8_t* dst, SwsContext** ctx_cache) {
    PlaneView src = view;
    std::vector<uint8_t> flip_buf;
    if (hflip) hflip_planes(view, flip_buf, src);

    SwsContext* ctx = sws_getCachedContext(
        ctx_cache ? *ctx_cache : nullptr, src.w, src.h, AV_PIX_FMT_YUV420P, tw,
        th, AV_PIX_FMT_RGB24, kSwsFlags, nullptr, nullptr, nullptr);
    if (!ctx) throw std::runtime_error("scaler init failed");
    const uint8_t* planes[4] = {src.y, src.u, src.v, nullptr};
    int strides[4] = {src.ls_y, src.ls_u, src.ls_v, 0};
    uint8_t* dplanes[4] = {dst, nullptr, nullptr, nullptr};
    int dstrides[4] = {tw * 3, 0, 0, 0};
    sws_scale(ctx, planes, strides, 0, src.h, dplanes, dstrides);
    if (ctx_cache)
        *ctx_cache = ctx;
    else
        sws_freeContext(ctx);
}

// Reference-path entry point: numpy plane views in (already cropped by
// slicing), RGB out. Must stay behaviorally identical to the fused path.
static py::array_t<uint8_t> yuv_to_rgb(py::array y, py::array u, py::array v,
                                       bool hflip, int tw, int th) {
    auto yi = y.request(), ui = u.request(), vi = v.request();
    if (yi.ndim != 2 || ui.ndim != 2 || vi.ndim != 2)
        throw std::invalid_argument("planes must be 2-D uint8 arrays");
    int w = static_cast<int>(yi.shape[1]), h = static_cast<int>(yi.shape[0]);
    int cw = (w + 1) / 2, ch = (h + 1) / 2;
    if (ui.shape[0] != ch || ui.shape[1] != cw || vi.shape[0] != ch ||
        vi.shape[1] != cw)
        throw std::invalid_argument("chroma plane shape mismatch");
    PlaneView view = {static_cast<const uint8_t*>(yi.ptr),
                      static_cast<const uint8_t*>(ui.ptr),
                      static_cast<const uint8_t*>(vi.ptr),
                      static_cast<int>(yi.strides[0]),
                      static_cast<int>(ui.strides[0]),
                      static_cast<int>(vi.strides[0]),
                      w,
                      h};
    py::array_t<uint8_t> out({th, tw, 3});
    uint8_t* dst = static_cast<uint8_t*>(out.request().ptr);
    {
        py::gil_scoped_release nogil;
        convert_to_rgb(view, hflip, tw, th, dst, nullptr);
    }
    return out;
}

// ---------------------------------------------------------------------------
// VideoReader: seek + decode with instrumentation counters
// ---------------------------------------------------------------------------

class VideoReader {
  public:
    VideoReader(py::object src, int thread_count) {
        in_.open(src);
        check(avformat_find_stream_info(in_.fmt, nullptr), "stream info");
        stream_idx_ = find_video_stream(in_.fmt);
        AVStream* st = in_.fmt->streams[stream_idx_];
        const AVCodec* dec = avcodec_find_decoder(st->codecpar->codec_id);
        if (!dec) throw std::runtime_error("unsupported codec");
        ctx_ = avcodec_alloc_context3(dec);
        check(avcodec_parameters_to_context(ctx_, st->codecpar),
              "codec params");
        ctx_->thread_count = std::max(1, thread_count);
        check(avcodec_open2(ctx_, dec, nullptr), "codec open");
        frame_ = av_frame_alloc();
        pkt_ = av_packet_alloc();
        tb_ = av_q2d(st->time_base);
        AVRational fr = st->avg_frame_rate.num > 0 ? st->avg_frame_rate
                                                   : st->r_frame_rate;
        fps_ = fr.den > 0 ? av_q2d(fr) : 0.0;
    }

    ~VideoReader() { close(); }

    void close() {
        if (sws_) {
            sws_freeContext(sws_);
            sws_ = nullptr;
        }
        if (frame_) av_frame_free(&frame_);
        if (pkt_) av_packet_free(&pkt_);
        if (ctx_) avcodec_free_context(&ctx_);
        in_.close();
    }

    int width() const { return ctx_->width; }
    int height() const { return ctx_->height; }
    double fps() const { return fps_; }

    double duration() const {
        AVStream* st = in_.fmt->streams[stream_idx_];
        if (st->duration != AV_NOPTS_VALUE) return st->duration * tb_;
        if (in_.fmt->duration != AV_NOPTS_VALUE)
            return in_.fmt->duration / static_cast<double>(AV_TIME_BASE);
        return 0.0;
    }

    void seek(double t) {
        AVStream* st = in_.fmt->streams[stream_idx_];
        int64_t ts = llrint(std::max(0.0, t) / tb_);
        if (st->start_time != AV_NOPTS_VALUE) ts += st->start_time;
        {
            py::gil_scoped_release nogil;
            int err =
                av_seek_frame(in_.fmt, stream_idx_, ts, AVSEEK_FLAG_BACKWARD);
            if (err < 0)  // fall back to a rewind for streams w/o an index
                err = av_seek_frame(in_.fmt, stream_idx_, 0,
                                    AVSEEK_FLAG_BACKWARD | AVSEEK_FLAG_BYTE);
            check(err, "seek");
            avcodec_flush_buffers(ctx_);
        }
        flushing_ = false;
        eof_ = false;
        have_frame_ = false;
        seeks_ += 1;
    }

    // Timestamp (sec) of the nearest indexed keyframe at or before t.
    // Returns -1 when the container exposes no usable index.
    double keyframe_before(double t) const {
        AVStream* st = in_.fmt->streams[stream_idx_];
        int64_t ts = llrint(std::max(0.0, t) / tb_);
        if (st->start_time != AV_NOPTS_VALUE) ts += st->start_time;
        int idx = av_index_search_timestamp(st, ts, AVSEEK_FLAG_BACKWARD);
        while (idx >= 0) {
#if LIBAVFORMAT_VERSION_MAJOR >= 59
            const AVIndexEntry* e = avformat_index_get_entry(
                const_cast<AVStream*>(st), idx);
            if (!e) return -1.0;
            if (e->flags & AVINDEX_KEYFRAME) {
                int64_t kts = e->timestamp;
#else
            if (st->index_entries[idx].flags & AVINDEX_KEYFRAME) {
                int64_t kts = st->index_entries[idx].timestamp;
#endif
                if (st->start_time != AV_NOPTS_VALUE) kts -= st->start_time;
                return kts * tb_;
            }
            --idx;
        }
        return -1.0;
    }

    // Decode the next frame in presentation order. Returns false at EOF.
    bool advance() {
        py::gil_scoped_release nogil;
        while (true) {
            int err = avcodec_receive_frame(ctx_, frame_);
            if (err == 0) {
                frames_decoded_ += 1;
                g_frames_decoded.fetch_add(1, std::memory_order_relaxed);
                have_frame_ = true;
                return true;
            }
            if (err == AVERROR_EOF) {
                eof_ = true;
                return false;
            }
            if (err != AVERROR(EAGAIN)) check(err, "decode");
            if (flushing_) {
                eof_ = true;
                return false;
            }
            while (true) {
                int rerr = av_read_frame(in_.fmt, pkt_);
                if (rerr == AVERROR_EOF) {
                    check(avcodec_send_packet(ctx_, nullptr), "decode flush");
                    flushing_ = true;
                    break;
                }
                check(rerr, "packet read");
                if (pkt_->stream_index != stream_idx_) {
                    av_packet_unref(pkt_);
                    continue;
                }
                packets_read_ += 1;
                bytes_read_ += pkt_->size;
                int serr = avcodec_send_packet(ctx_, pkt_);
                av_packet_unref(pkt_);
                if (serr < 0 && serr != AVERROR(EAGAIN))
                    throw std::runtime_error("decode @" +
                                             std::to_string(last_pts_sec()) +
                                             "s: " + averr(serr));
                break;
            }
        }
    }

    double last_pts_sec() const {
        int64_t pts = frame_->best_effort_timestamp;
        if (pts == AV_NOPTS_VALUE) pts = frame_->pts;
        if (pts == AV_NOPTS_VALUE) return 0.0;
        AVStream* st = in_.fmt->streams[stream_idx_];
        if (st->start_time != AV_NOPTS_VALUE) pts -= st->start_time;
        return pts * tb_;
    }

    double last_duration_sec() const {
        if (frame_->pkt_duration > 0) return frame_->pkt_duration * tb_;
        return fps_ > 0 ? 1.0 / fps_ : 0.0;
    }

    // Full-plane copies of the current frame (reference path's per-frame
    // materialization cost).
    py::tuple current_raw() {
        require_frame();
        check_format();
        int w = frame_->width, h = frame_->height;
        int cw = (w + 1) / 2, ch = (h + 1) / 2;
        py::array_t<uint8_t> y({h, w}), u({ch, cw}), v({ch, cw});
        copy_plane(frame_->data[0], frame_->linesize[0], w, h,
                   static_cast<uint8_t*>(y.request().ptr));
        copy_plane(frame_->data[1], frame_->linesize[1], cw, ch,
                   static_cast<uint8_t*>(u.request().ptr));
        copy_plane(frame_->data[2], frame_->linesize[2], cw, ch,
                   static_cast<uint8_t*>(v.request().ptr));
        return py::make_tuple(last_pts_sec(), y, u, v);
    }

    // Fused path: crop/flip/scale straight off the decoder's frame buffer;
    // only the cropped region is ever converted.
    py::array_t<uint8_t> current_rgb(int cx, int cy, int cw, int ch,
                                     bool hflip, int tw, int th) {
        require_frame();
        check_format();
        if (cx < 0 || cy < 0 || cw < 1 || ch < 1 ||
            cx + cw > frame_->width || cy + ch > frame_->height)
            throw std::invalid_argument("crop outside frame geometry");
        PlaneView view = crop_view(cx, cy, cw, ch);
        py::array_t<uint8_t> out({th, tw, 3});
        uint8_t* dst = static_cast<uint8_t*>(out.request().ptr);
        {
            py::gil_scoped_release nogil;
            convert_to_rgb(view, hflip, tw, th, dst, &sws_);
        }
        return out;
    }

    py::object next_raw() {
        if (!advance()) return py::none();
        return current_raw();
    }

    py::object next_rgb(int cx, int cy, int cw, int ch, bool hflip, int tw,
                        int th) {
        if (!advance()) return py::none();
        return py::make_tuple(last_pts_sec(),
                              current_rgb(cx, cy, cw, ch, hflip, tw, th));
    }

    py::dict counters() const {
        py::dict d;
        d["frames_decoded"] = frames_decoded_;
        d["packets_read"] = packets_read_;
        d["bytes_read"] = bytes_read_;
        d["seeks"] = seeks_;
        return d;
    }

    void reset_counters() {
        frames_decoded_ = packets_read_ = bytes_read_ = seeks_ = 0;
    }

  private:
    void require_frame() const {
        if (!have_frame_)
            throw std::runtime_error("no current frame (call advance first)");
    }

    void check_format() const {
        int f = frame_->format;
        if (f != AV_PIX_FMT_YUV420P && f != AV_PIX_FMT_YUVJ420P)
            throw std::runtime_error(
                "unsupported pixel format (need yuv420p): " +
                std::string(av_get_pix_fmt_name(static_cast<AVPixelFormat>(f))));
    }

    PlaneView crop_view(int cx, int cy, int cw, int ch) const {
        PlaneView v;
        v.ls_y = frame_->linesize[0];
        v.ls_u = frame_->linesize[1];
        v.ls_v = frame_->linesize[2];
        v.y = frame_->data[0] + static_cast<int64_t>(cy) * v.ls_y + cx;
        v.u = frame_->data[1] + static_cast<int64_t>(cy / 2) * v.ls_u + cx / 2;
        v.v = frame_->data[2] + static_cast<int64_t>(cy / 2) * v.ls_v + cx / 2;
        v.w = cw;
        v.h = ch;
        return v;
    }

    static void copy_plane(const uint8_t* src, int stride, int w, int h,
                           uint8_t* dst) {
        for (int r = 0; r < h; ++r)
            memcpy(dst + static_cast<int64_t>(r) * w,
                   src + static_cast<int64_t>(r) * stride, w);
    }

    InputHandle in_;
    AVCodecContext* ctx_ = nullptr;
    AVFrame* frame_ = nullptr;
    AVPacket* pkt_ = nullptr;
    SwsContext* sws_ = nullptr;
    int stream_idx_ = -1;
    double tb_ = 0.0, fps_ = 0.0;
    bool flushing_ = false, eof_ = false, have_frame_ = false;
    int64_t frames_decoded_ = 0, packets_read_ = 0, bytes_read_ = 0,
            seeks_ = 0;
};

// ---------------------------------------------------------------------------
// VideoWriter: RGB frames in, H.264 (or other) MP4 out
// ---------------------------------------------------------------------------

class VideoWriter {
  public:
    VideoWriter(const std::string& path, int w, int h, int fps_num,
                int fps_den, const std::string& codec, int64_t bit_rate,
                int gop, const std::string& preset, int crf) {
        check(avformat_alloc_output_context2(&fmt_, nullptr, nullptr,
                                             path.c_str()),
              "output alloc");
        const AVCodec* enc = avcodec_find_encoder_by_name(codec.c_str());
        if (!enc) enc = avcodec_find_encoder(AV_CODEC_ID_H264);
        if (!enc) throw std::runtime_error("encoder unavailable: " + codec);
        ctx_ = avcodec_alloc_context3(enc);
        ctx_->width = w;
        ctx_->height = h;
        ctx_->time_base = {fps_den, fps_num};
        ctx_->framerate = {fps_num, fps_den};
        ctx_->pix_fmt = AV_PIX_FMT_YUV420P;
        ctx_->max_b_frames = 0;  // keeps pts==dts; simplifies remux cuts
        ctx_->thread_count = 1;
        if (bit_rate > 0) ctx_->bit_rate = bit_rate;
        if (gop > 0) {
            ctx_->gop_size = gop;
            ctx_->keyint_min = gop;
        }
        if (fmt_->oformat->flags & AVFMT_GLOBALHEADER)
            ctx_->flags |= AV_CODEC_FLAG_GLOBAL_HEADER;
        if (enc->id == AV_CODEC_ID_H264) {
            av_opt_set(ctx_->priv_data, "preset", preset.c_str(), 0);
            if (crf >= 0)
                av_opt_set(ctx_->priv_data, "crf", std::to_string(crf).c_str(),
                           0);
            // exact GOP placement: no scene-cut keyframes
            av_opt_set(ctx_->priv_data, "x264-params", "scenecut=0", 0);
        }
        check(avcodec_open2(ctx_, enc, nullptr), "encoder open");

        st_ = avformat_new_stream(fmt_, nullptr);
        if (!st_) throw std::runtime_error("stream alloc failed");
        st_->time_base = ctx_->time_base;
        check(avcodec_parameters_from_context(st_->codecpar, ctx_),
              "stream params");
        if (!(fmt_->oformat->flags & AVFMT_NOFILE))
            check(avio_open(&fmt_->pb, path.c_str(), AVIO_FLAG_WRITE),
                  "file open: " + path);
        check(avformat_write_header(fmt_, nullptr), "header write");

        frame_ = av_frame_alloc();
        frame_->format = AV_PIX_FMT_YUV420P;
        frame_->width = w;
        frame_->height = h;
        check(av_frame_get_buffer(frame_, 0), "frame alloc");
        pkt_ = av_packet_alloc();
    }

    ~VideoWriter() {
        if (open_) {
            try {
                close();
            } catch (...) {
            }
        }
        if (frame_) av_frame_free(&frame_);
        if (pkt_) av_packet_free(&pkt_);
        if (ctx_) avcodec_free_context(&ctx_);
        if (fmt_) {
            if (fmt_->pb && !(fmt_->oformat->flags & AVFMT_NOFILE))
                avio_closep(&fmt_->pb);
            avformat_free_context(fmt_);
            fmt_ = nullptr;
        }
    }

    void write_rgb(py::array_t<uint8_t, py::array::c_style |
                                            py::array::forcecast> rgb) {
        if (!open_) throw std::runtime_error("writer is closed");
        auto info = rgb.request();
        if (info.ndim != 3 || info.shape[0] != ctx_->height ||
            info.shape[1] != ctx_->width || info.shape[2] != 3)
            throw std::invalid_argument("expected [height, width, 3] uint8");
        const uint8_t* src = static_cast<const uint8_t*>(info.ptr);
        py::gil_scoped_release nogil;
        check(av_frame_make_writable(frame_), "frame reuse");
        sws_rgb_ = sws_getCachedContext(sws_rgb_, ctx_->width, ctx_->height,
                                        AV_PIX_FMT_RGB24, ctx_->width,
                                        ctx_->height, AV_PIX_FMT_YUV420P,
                                        kSwsFlags, nullptr, nullptr, nullptr);
        const uint8_t* splanes[4] = {src, nullptr, nullptr, nullptr};
        int sstrides[4] = {ctx_->width * 3, 0, 0, 0};
        sws_scale(sws_rgb_, splanes, sstrides, 0, ctx_->height, frame_->data,
                  frame_->linesize);
        frame_->pts = next_pts_++;
        encode(frame_);
    }

    // Lossless plane hand-off (no color conversion); planes must be full
    // frame geometry with yuv420 chroma sizes.
    void write_yuv(py::array_t<uint8_t, py::array::c_style |
                                            py::array::forcecast> y,
                   py::array_t<uint8_t, py::array::c_style |
                                            py::array::forcecast> u,
                   py::array_t<uint8_t, py::array::c_style |
                                            py::array::forcecast> v) {
        if (!open_) throw std::runtime_error("writer is closed");
        int w = ctx_->width, h = ctx_->height;
        int cw = (w + 1) / 2, ch = (h + 1) / 2;
        auto yi = y.request(), ui = u.request(), vi = v.request();
        if (yi.ndim != 2 || yi.shape[0] != h || yi.shape[1] != w ||
            ui.ndim != 2 || ui.shape[0] != ch || ui.shape[1] != cw ||
            vi.ndim != 2 || vi.shape[0] != ch || vi.shape[1] != cw)
            throw std::invalid_argument("plane shapes do not match geometry");
        py::gil_scoped_release nogil;
        check(av_frame_make_writable(frame_), "frame reuse");
        copy_into(static_cast<const uint8_t*>(yi.ptr), w, h, frame_->data[0],
                  frame_->linesize[0]);
        copy_into(static_cast<const uint8_t*>(ui.ptr), cw, ch, frame_->data[1],
                  frame_->linesize[1]);
        copy_into(static_cast<const uint8_t*>(vi.ptr), cw, ch, frame_->data[2],
                  frame_->linesize[2]);
        frame_->pts = next_pts_++;
        encode(frame_);
    }

    void close() {
        if (!open_) return;
        {
            py::gil_scoped_release nogil;
            encode(nullptr);  // drain
            check(av_write_trailer(fmt_), "trailer write");
        }
        open_ = false;
        if (sws_rgb_) {
            sws_freeContext(sws_rgb_);
            sws_rgb_ = nullptr;
        }
    }

    int64_t frames_written() const { return next_pts_; }

  private:
    static void copy_into(const uint8_t* src, int w, int h, uint8_t* dst,
                          int stride) {
        for (int r = 0; r < h; ++r)
            memcpy(dst + static_cast<int64_t>(r) * stride,
                   src + static_cast<int64_t>(r) * w, w);
    }

    void encode(AVFrame* f) {
        int err = avcodec_send_frame(ctx_, f);
        check(err, "encode");
        while (true) {
            err = avcodec_receive_packet(ctx_, pkt_);
            if (err == AVERROR(EAGAIN) || err == AVERROR_EOF) break;
            check(err, "encode");
            if (pkt_->duration == 0) pkt_->duration = 1;
            av_packet_rescale_ts(pkt_, ctx_->time_base, st_->time_base);
            pkt_->stream_index = st_->index;
            check(av_interleaved_write_frame(fmt_, pkt_), "packet write");
        }
    }

    AVFormatContext* fmt_ = nullptr;
    AVCodecContext* ctx_ = nullptr;
    AVStream* st_ = nullptr;
    AVFrame* frame_ = nullptr;
    AVPacket* pkt_ = nullptr;
    SwsContext* sws_rgb_ = nullptr;
    int64_t next_pts_ = 0;
    bool open_ = true;
};

// ---------------------------------------------------------------------------
// remux_cut: packet copy from the keyframe at/before `start` up to `end`
// ---------------------------------------------------------------------------

static py::dict remux_cut(const std::string& src, const std::string& dst,
                          double start, double end) {
    InputHandle in;
    in.open(py::str(src));
    check(avformat_find_stream_info(in.fmt, nullptr), "stream info");
    int idx = find_video_stream(in.fmt);
    AVStream* ist = in.fmt->streams[idx];
    double tb = av_q2d(ist->time_base);

    AVFormatContext* out = nullptr;
    check(avformat_alloc_output_context2(&out, nullptr, nullptr, dst.c_str()),
          "output alloc");
    AVStream* ost = avformat_new_stream(out, nullptr);
    check(avcodec_parameters_copy(ost->codecpar, ist->codecpar),
          "param copy");
    ost->time_base = ist->time_base;

    int64_t start_ts = llrint(start / tb);
    int64_t end_ts = llrint(end / tb);
    if (ist->start_time != AV_NOPTS_VALUE) {
        start_ts += ist->start_time;
        end_ts += ist->start_time;
    }

    int64_t first_dts = AV_NOPTS_VALUE, first_pts = AV_NOPTS_VALUE;
    int64_t packets = 0;
    bool first_is_key = false;
    try {
        check(avio_open(&out->pb, dst.c_str(), AVIO_FLAG_WRITE),
              "file open: " + dst);
        check(avformat_write_header(out, nullptr), "header write");
        check(av_seek_frame(in.fmt, idx, start_ts, AVSEEK_FLAG_BACKWARD),
              "seek");
        AVPacket* pkt = av_packet_alloc();
        while (av_read_frame(in.fmt, pkt) >= 0) {
            if (pkt->stream_index != idx) {
                av_packet_unref(pkt);
                continue;
            }
            int64_t pts = pkt->pts != AV_NOPTS_VALUE ? pkt->pts : pkt->dts;
            if (pts >= end_ts) {
                av_packet_unref(pkt);
                break;
            }
            if (first_dts == AV_NOPTS_VALUE) {
                first_dts = pkt->dts != AV_NOPTS_VALUE ? pkt->dts : pts;
                first_pts = pts;
                first_is_key = (pkt->flags & AV_PKT_FLAG_KEY) != 0;
            }
            pkt->pts -= first_dts;
            if (pkt->dts != AV_NOPTS_VALUE) pkt->dts -= first_dts;
            av_packet_rescale_ts(pkt, ist->time_base, ost->time_base);
            pkt->stream_index = ost->index;
            check(av_interleaved_write_frame(out, pkt), "packet write");
            packets += 1;
        }
        av_packet_free(&pkt);
        check(av_write_trailer(out), "trailer write");
    } catch (...) {
        if (out->pb) avio_closep(&out->pb);
        avformat_free_context(out);
        throw;
    }
    avio_closep(&out->pb);
    avformat_free_context(out);

    double actual_start = 0.0;
    if (first_pts != AV_NOPTS_VALUE) {
        int64_t p = first_pts;
        if (ist->start_time != AV_NOPTS_VALUE) p -= ist->start_time;
        actual_start = p * tb;
    }
    py::dict d;
    d["actual_start"] = actual_start;
    d["drift"] = start - actual_start;
    d["packets"] = packets;
    d["keyframe_aligned"] = first_is_key;
    return d;
}

PYBIND11_MODULE(_codec, m) {
    m.doc() = "libav-backed probe/decode/encode/remux primitives";
    av_log_set_level(AV_LOG_ERROR);
    m.def("set_log_level", [](int level) { av_log_set_level(level); },
          py::arg("level"));
    m.def("global_frames_decoded",
          []() { return g_frames_decoded.load(std::memory_order_relaxed); });
    m.def("probe", &probe, py::arg("src"));
    m.def("yuv_to_rgb", &yuv_to_rgb, py::arg("y"), py::arg("u"), py::arg("v"),
          py::arg("hflip"), py::arg("target_w"), py::arg("target_h"));
    m.def("remux_cut", &remux_cut, py::arg("src"), py::arg("dst"),
          py::arg("start"), py::arg("end"));
    m.attr("SCALER_FLAGS") = kSwsFlags;

    py::class_<VideoReader>(m, "VideoReader")
        .def(py::init<py::object, int>(), py::arg("src"),
             py::arg("thread_count") = 1)
        .def_property_readonly("width", &VideoReader::width)
        .def_property_readonly("height", &VideoReader::height)
        .def_property_readonly("fps", &VideoReader::fps)
        .def_property_readonly("duration", &VideoReader::duration)
        .def("seek", &VideoReader::seek, py::arg("t"))
        .def("keyframe_before", &VideoReader::keyframe_before, py::arg("t"))
        .def("advance", &VideoReader::advance)
        .def("current_raw", &VideoReader::current_raw)
        .def("current_rgb", &VideoReader::current_rgb, py::arg("crop_x"),
             py::arg("crop_y"), py::arg("crop_w"), py::arg("crop_h"),
             py::arg("hflip"), py::arg("target_w"), py::arg("target_h"))
        .def("next_raw", &VideoReader::next_raw)
        .def("next_rgb", &VideoReader::next_rgb, py::arg("crop_x"),
             py::arg("crop_y"), py::arg("crop_w"), py::arg("crop_h"),
             py::arg("hflip"), py::arg("target_w"), py::arg("target_h"))
        .def("last_pts", &VideoReader::last_pts_sec)
        .def("last_frame_duration", &VideoReader::last_duration_sec)
        .def("counters", &VideoReader::counters)
        .def("reset_counters", &VideoReader::reset_counters)
        .def("close", &VideoReader::close);

    py::class_<VideoWriter>(m, "VideoWriter")
        .def(py::init<const std::string&, int, int, int, int,
                      const std::string&, int64_t, int, const std::string&,
                      int>(),
             py::arg("path"), py::arg("width"), py::arg("height"),
             py::arg("fps_num"), py::arg("fps_den"),
             py::arg("codec") = "libx264", py::arg("bit_rate") = 0,
             py::arg("gop") = 0, py::arg("preset") = "veryfast",
             py::arg("crf") = -1)
        .def("write_rgb", &VideoWriter::write_rgb, py::arg("rgb"))
        .def("write_yuv", &VideoWriter::write_yuv, py::arg("y"), py::arg("u"),
             py::arg("v"))
        .def("close", &VideoWriter::close)
        .def_property_readonly("frames_written", &VideoWriter::frames_written);
}
