#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "rht/dataio/augment.hpp"
#include "rht/dataio/describe.hpp"
#include "rht/dataio/image.hpp"
#include "rht/dataio/manifest.hpp"
#include "rht/dataio/pts.hpp"
#include "support/oracles.hpp"

using namespace rht;
using namespace rht::dataio;

namespace {

std::filesystem::path scratch_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("rht_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

PtsAnnotation random_pts(std::size_t n, Rng& rng)
{
    PtsAnnotation a{1, n, {}};
    for (std::size_t i = 0; i < n; ++i)
        a.points.push_back({rng.uniform(-5, 300), rng.uniform(-5, 300)});
    return a;
}

} // namespace

TEST(Pts, ParsesCanonicalFile)
{
    const auto a = parse_pts("version: 1\nn_points: 2\n{\n1.5 2\n-3 4e1\n}\n");
    EXPECT_EQ(a.version, 1);
    ASSERT_EQ(a.n_points, 2u);
    EXPECT_EQ(a.points[0].x, 1.5);
    EXPECT_EQ(a.points[1].y, 40.0);
}

TEST(Pts, ToleratesCrlfAndCompactHeader)
{
    const auto a = parse_pts("version:1\r\nn_points:  1\r\n{\r\n 7  8 \r\n}\r\n");
    EXPECT_EQ(a.points[0].x, 7.0);
    EXPECT_EQ(a.points[0].y, 8.0);
}

TEST(Pts, RejectsMalformedInput)
{
    std::string body = "version: 1\nn_points: 68\n{\n";
    for (int i = 0; i < 67; ++i)
        body += "1 2\n";
    body += "}\n";
    try {
        parse_pts(body);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("68"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("67"), std::string::npos);
    }
    EXPECT_THROW(parse_pts("n_points: 1\n{\n1 2\n}\n"), FormatError);
    EXPECT_THROW(parse_pts("version: 1\nn_points: 1\n{\n1 2\n"), FormatError);
    EXPECT_THROW(parse_pts("version: 1\nn_points: 1\n{\n1\n}\n"), FormatError);
    EXPECT_THROW(parse_pts("version: 1\nn_points: 1\n{\n1 x\n}\n"), FormatError);
    EXPECT_THROW(parse_pts("version: 1\nn_points: 1\n{\n1 2\n}\nextra"), FormatError);
}

TEST(Pts, WriteReadWriteIsByteIdentical)
{
    Rng rng(1);
    for (int t = 0; t < 50; ++t) {
        const auto a = random_pts(1 + rng.index(80), rng);
        const auto text = write_pts(a);
        const auto back = parse_pts(text);
        EXPECT_EQ(back, a);
        EXPECT_EQ(write_pts(back), text);
    }
}

TEST(Pts, FileRoundTrip)
{
    Rng rng(2);
    const auto dir = scratch_dir("pts");
    const auto a = random_pts(68, rng);
    write_pts(dir / "a.pts", a);
    EXPECT_EQ(read_pts(dir / "a.pts"), a);
    EXPECT_THROW(read_pts(dir / "missing.pts"), IoError);
}

TEST(Pts, VisibilityFlags)
{
    EXPECT_EQ(parse_visibility("1 0\n1", 3), (std::vector<std::uint8_t>{1, 0, 1}));
    EXPECT_THROW(parse_visibility("1 0", 3), InvalidArgument);
    EXPECT_THROW(parse_visibility("1 2 0", 3), FormatError);
}

TEST(Augment, NonePolicyIsIdentity)
{
    Rng rng(3);
    const auto img = oracle::random_volume(16, 20, 3, rng, 0, 1);
    const auto lm = LandmarkSet::visible_points({{3, 4}, {15.5, 10.25}});
    const auto r = augment(img, lm, AugmentationPolicy::none(), rng);
    EXPECT_TRUE(r.draw.is_identity());
    for (std::size_t i = 0; i < img.size(); ++i)
        EXPECT_NEAR(r.image.values()[i], img.values()[i], 1e-12);
    for (std::size_t m = 0; m < 2; ++m) {
        EXPECT_NEAR(r.landmarks.points[m].x, lm.points[m].x, 1e-12);
        EXPECT_NEAR(r.landmarks.points[m].y, lm.points[m].y, 1e-12);
    }
}

TEST(Augment, FlipMirrorsAndPermutes)
{
    const auto lm = LandmarkSet::visible_points({{2, 5}, {10, 5}, {4, 9}, {8, 9}});
    AugmentationDraw d;
    d.flip = true;
    const ImageSize size{16, 12};
    const auto out = transform_landmarks(lm, d, size, {1, 0, 3, 2});
    const std::vector<std::size_t> perm{1, 0, 3, 2};
    for (std::size_t m = 0; m < 4; ++m) {
        EXPECT_NEAR(out.points[m].x, 15.0 - lm.points[perm[m]].x, 1e-12);
        EXPECT_NEAR(out.points[m].y, lm.points[perm[m]].y, 1e-12);
    }

    Volume<double> img(12, 16, 1);
    img(5, 2, 0) = 1.0;
    const auto warped = warp_volume(img, d);
    EXPECT_NEAR(warped(5, 13, 0), 1.0, 1e-12);
}

TEST(Augment, DeterministicForSeed)
{
    Rng rng(4);
    const auto img = oracle::random_volume(24, 24, 3, rng, 0, 1);
    const auto lm = LandmarkSet::visible_points({{6, 6}, {17, 6}, {12, 12}, {8, 18}, {16, 18}});
    AugmentationPolicy p;
    Rng a(99), b(99);
    for (int t = 0; t < 5; ++t) {
        const auto ra = augment(img, lm, p, a), rb = augment(img, lm, p, b);
        EXPECT_EQ(ra.image, rb.image);
        EXPECT_EQ(ra.landmarks.points.size(), rb.landmarks.points.size());
        for (std::size_t m = 0; m < lm.size(); ++m) {
            EXPECT_EQ(ra.landmarks.points[m].x, rb.landmarks.points[m].x);
            EXPECT_EQ(ra.landmarks.visibility[m], rb.landmarks.visibility[m]);
        }
    }
}

TEST(Augment, PreservesLandmarkCountAndKeepsOneVisible)
{
    Rng rng(5);
    const auto img = oracle::random_volume(32, 32, 3, rng, 0, 1);
    std::vector<Point2> pts;
    for (int i = 0; i < 10; ++i)
        pts.push_back({rng.uniform(4, 28), rng.uniform(4, 28)});
    const auto lm = LandmarkSet::visible_points(pts);
    AugmentationPolicy p;
    for (int t = 0; t < 30; ++t) {
        const auto r = augment(img, lm, p, rng);
        ASSERT_EQ(r.landmarks.size(), 10u);
        ASSERT_EQ(r.image.grid(), img.grid());
        if (r.augmented)
            EXPECT_GT(std::count(r.landmarks.visibility.begin(), r.landmarks.visibility.end(), 1), 0);
        for (std::size_t m = 0; m < 10; ++m)
            if (r.landmarks.visible(m)) {
                EXPECT_GE(r.landmarks.points[m].x, 0.0);
                EXPECT_LE(r.landmarks.points[m].x, 31.0);
            }
    }
}

TEST(Augment, RenderCommutesWithGeometricWarp)
{
    // Warping a rendered heatmap and rendering the moved landmark agree at the decoded peak.
    Rng rng(6);
    const ImageSize size{48, 48};
    for (int t = 0; t < 20; ++t) {
        AugmentationDraw d;
        d.angle = rng.uniform(-30, 30);
        d.scale = rng.uniform(0.9, 1.1);
        d.shift_x = rng.uniform(-0.05, 0.05);
        d.shift_y = rng.uniform(-0.05, 0.05);
        d.flip = rng.bernoulli(0.5);
        const auto lm = LandmarkSet::visible_points({{rng.uniform(16, 32), rng.uniform(16, 32)}});
        const auto moved = transform_landmarks(lm, d, size, {});
        const auto hm = render_landmark_heatmaps(lm, {48, 48}, 1.5);
        HeatmapStack<double> warped{warp_volume(hm.data, d), 1, 0, 1.5};
        const auto p = decode_heatmaps(warped).points[0];
        EXPECT_NEAR(p.x, moved.points[0].x, 0.3);
        EXPECT_NEAR(p.y, moved.points[0].y, 0.3);
    }
}

TEST(Augment, PhotometricOperations)
{
    Volume<double> img(3, 3, 3);
    img(1, 1, 0) = 9;
    const auto blurred = box_blur3(img);
    EXPECT_DOUBLE_EQ(blurred(0, 0, 0), 9.0 / 4);
    EXPECT_DOUBLE_EQ(blurred(0, 1, 0), 9.0 / 6);
    EXPECT_DOUBLE_EQ(blurred(1, 1, 0), 1.0);

    AugmentationDraw d;
    d.gray = true;
    d.occlusion = Occluder{0, 0, 1, 2, 0.5};
    Volume<double> c(2, 2, 3);
    c(1, 1, 0) = 1;
    const auto out = apply_photometric(c, d);
    EXPECT_DOUBLE_EQ(out(1, 1, 2), 0.299);
    EXPECT_EQ(out(0, 0, 1), 0.5);
    EXPECT_EQ(out(1, 0, 1), 0.5);
    EXPECT_EQ(out(0, 1, 1), 0.0);
}

TEST(Augment, RejectsInvalidPolicy)
{
    Rng rng(7);
    AugmentationPolicy p;
    p.flip_p = 1.5;
    EXPECT_THROW(draw_augmentation(p, rng, {8, 8}), InvalidArgument);
}

TEST(Describe, ConstantImageHasZeroDescriptor)
{
    const auto d = describe(Volume<double>(16, 16, 3, 0.4));
    EXPECT_TRUE(d.zero);
    ASSERT_EQ(d.values.size(), 128u);
    for (double v : d.values)
        EXPECT_EQ(v, 0.0);
}

TEST(Describe, HorizontalRampFillsOneBin)
{
    Volume<double> img(16, 16, 1);
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x)
            img(y, x, 0) = static_cast<double>(x) / 15;
    const auto d = describe(img);
    double ss = 0;
    for (std::size_t i = 0; i < d.values.size(); ++i) {
        ss += d.values[i] * d.values[i];
        if (i % descriptor_bins != 0)
            EXPECT_EQ(d.values[i], 0.0) << i;
    }
    EXPECT_NEAR(ss, 1.0, 1e-12);
    // Every cell sees the same gradient.
    EXPECT_NEAR(d.values[0], 0.25, 1e-12);
}

TEST(Describe, RotationByHalfTurnShiftsBinsByFour)
{
    Rng rng(8);
    const auto img = oracle::random_volume(16, 16, 1, rng, 0, 1);
    Volume<double> rot(16, 16, 1);
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x)
            rot(15 - y, 15 - x, 0) = img(y, x, 0);
    const auto a = describe(img), b = describe(rot);
    // Gradients are negated and cells mirrored, so bin k of cell (cy, cx) lands in bin k+4 of (3-cy, 3-cx),
    // up to samples exactly on a sector boundary.
    double worst = 0;
    for (std::size_t cy = 0; cy < 4; ++cy)
        for (std::size_t cx = 0; cx < 4; ++cx)
            for (std::size_t k = 0; k < 8; ++k)
                worst = std::max(worst, std::abs(a.values[(cy * 4 + cx) * 8 + k] -
                                                 b.values[((3 - cy) * 4 + (3 - cx)) * 8 + (k + 4) % 8]));
    EXPECT_LT(worst, 1e-9);
}

TEST(Describe, RejectsTinyImage) { EXPECT_THROW(describe(Volume<double>(4, 4, 1)), InvalidArgument); }

TEST(SelectReference, SelfIsBestMatch)
{
    Rng rng(9);
    std::vector<Descriptor> gallery;
    for (int i = 0; i < 8; ++i)
        gallery.push_back(describe(oracle::random_volume(16, 16, 3, rng, 0, 1)));
    for (std::size_t i = 0; i < gallery.size(); ++i) {
        const auto m = select_reference(gallery[i], gallery);
        EXPECT_EQ(m.index, i);
        EXPECT_NEAR(m.similarity, 1.0, 1e-12);
    }
}

TEST(SelectReference, OneHotDescriptors)
{
    std::vector<Descriptor> gallery(3);
    for (std::size_t i = 0; i < 3; ++i) {
        gallery[i].values.assign(128, 0.0);
        gallery[i].values[i * 10] = 1.0;
    }
    Descriptor t;
    t.values.assign(128, 0.0);
    t.values[20] = 0.8;
    t.values[0] = 0.6;
    const auto m = select_reference(t, gallery);
    EXPECT_EQ(m.index, 2u);
    EXPECT_DOUBLE_EQ(m.similarity, 0.8);
}

TEST(SelectReference, MatchesBruteForceAndIsPermutationEquivariant)
{
    Rng rng(10);
    std::vector<Descriptor> gallery;
    for (int i = 0; i < 12; ++i) {
        Descriptor d;
        for (std::size_t k = 0; k < 128; ++k)
            d.values.push_back(rng.uniform(0, 1));
        gallery.push_back(std::move(d));
    }
    Descriptor t;
    for (std::size_t k = 0; k < 128; ++k)
        t.values.push_back(rng.uniform(0, 1));
    std::size_t best = 0;
    double best_s = -2;
    for (std::size_t i = 0; i < gallery.size(); ++i) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t k = 0; k < 128; ++k) {
            dot += t.values[k] * gallery[i].values[k];
            na += t.values[k] * t.values[k];
            nb += gallery[i].values[k] * gallery[i].values[k];
        }
        const double s = dot / std::sqrt(na * nb);
        if (s > best_s) {
            best_s = s;
            best = i;
        }
    }
    const auto m = select_reference(t, gallery);
    EXPECT_EQ(m.index, best);
    EXPECT_NEAR(m.similarity, best_s, 1e-12);

    std::vector<Descriptor> reversed(gallery.rbegin(), gallery.rend());
    EXPECT_EQ(select_reference(t, reversed).index, gallery.size() - 1 - best);
    EXPECT_THROW(select_reference(t, std::vector<Descriptor>{}), InvalidArgument);
}

TEST(Pnm, RoundTripQuantized)
{
    Rng rng(11);
    for (std::size_t c : {1u, 3u}) {
        Volume<double> img(5, 7, c);
        for (auto& v : img.values())
            v = static_cast<double>(rng.index(256)) / 255.0;
        const auto bytes = encode_pnm(img);
        const auto back = decode_pnm(bytes);
        ASSERT_EQ(back.grid(), img.grid());
        for (std::size_t i = 0; i < img.size(); ++i)
            EXPECT_NEAR(back.values()[i], img.values()[i], 1e-12);
        EXPECT_EQ(encode_pnm(back), bytes);
    }
}

TEST(Pnm, HeaderCommentsAndErrors)
{
    const std::string bytes = std::string("P5\n# comment\n2 1\n255\n") + '\x00' + '\xff';
    const auto img = decode_pnm(bytes);
    EXPECT_EQ(img(0, 1, 0), 1.0);
    EXPECT_THROW(decode_pnm("P3\n1 1\n255\n0"), FormatError);
    EXPECT_THROW(decode_pnm(std::string("P5\n2 2\n255\n") + '\x00'), FormatError);
    EXPECT_THROW(decode_pnm("P5\n1 1\n65535\n00"), FormatError);
}

TEST(Convention, Default68IsValid)
{
    const auto c = default_convention_68();
    EXPECT_EQ(c.num_landmarks, 68u);
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.boundaries.size(), 13u);
    EXPECT_EQ(c.flip_permutation.size(), 68u);
    const auto back = convention_from_json(to_json(c));
    EXPECT_EQ(back.boundaries.boundaries, c.boundaries.boundaries);
    EXPECT_EQ(back.flip_permutation, c.flip_permutation);
    EXPECT_EQ(back.left_eye_corner, c.left_eye_corner);
}

TEST(Convention, RejectsBadPermutation)
{
    nlohmann::json j{{"num_landmarks", 3}, {"flip_permutation", {1, 2, 0}}};
    EXPECT_THROW(convention_from_json(j), InvalidArgument);
    EXPECT_THROW(convention_from_json(nlohmann::json{{"num_landmarks", 2}, {"left_pupil", {5}}}), InvalidArgument);
    EXPECT_THROW(convention_from_json(nlohmann::json("unknown")), InvalidArgument);
}

TEST(Manifest, LoadsEntriesBoxesAndVisibility)
{
    Rng rng(12);
    const auto dir = scratch_dir("manifest");
    write_pts(dir / "a.pts", random_pts(3, rng));
    write_pts(dir / "b.pts", random_pts(3, rng));
    io::write_file(dir / "b.vis", "1 0 1\n");
    const nlohmann::json m{
        {"convention", {{"name", "tri"}, {"num_landmarks", 3}, {"left_eye_corner", 0}, {"right_eye_corner", 1}}},
        {"entries",
         {{{"annotation", "a.pts"}, {"box", {40, 30}}},
          {{"annotation", (dir / "b.pts").string()},
           {"box", {{"width", 10}, {"height", 20}}},
           {"visibility", "b.vis"},
           {"tags", {"hard"}}}}}};
    io::write_file(dir / "m.json", m.dump());
    const auto man = load_manifest(dir / "m.json");
    ASSERT_EQ(man.entries.size(), 2u);
    EXPECT_EQ(man.entries[0].stem(), "a");
    EXPECT_EQ(man.entries[0].box->width, 40.0);
    EXPECT_EQ(man.entries[1].box->height, 20.0);
    EXPECT_EQ(man.entries[1].tags, std::vector<std::string>{"hard"});
    EXPECT_EQ(man.load_landmarks(1).visibility, (std::vector<std::uint8_t>{1, 0, 1}));
    EXPECT_EQ(man.load_landmarks(0).visibility, (std::vector<std::uint8_t>{1, 1, 1}));
}

TEST(Manifest, Errors)
{
    const auto dir = scratch_dir("manifest_err");
    EXPECT_THROW(load_manifest(dir / "nope.json"), IoError);
    EXPECT_THROW(parse_manifest("{not json", dir), FormatError);
    EXPECT_THROW(parse_manifest(R"({"entries": [{"annotation": "missing.pts"}]})", dir), IoError);
    Rng rng(13);
    write_pts(dir / "a.pts", random_pts(4, rng));
    EXPECT_THROW(parse_manifest(R"({"entries": [{"annotation": "a.pts", "box": [1, 2, 3]}]})", dir), InvalidArgument);
    EXPECT_THROW(parse_manifest(R"({"entries": [{"annotation": "a.pts", "box": [0, 2]}]})", dir), InvalidArgument);
    const auto man = parse_manifest(R"({"entries": [{"annotation": "a.pts"}]})", dir);
    EXPECT_THROW(man.load_landmarks(0), InvalidArgument);
}
