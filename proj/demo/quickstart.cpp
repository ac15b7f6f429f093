// Walks one scene through the toolkit: render, sparse representation,
// PnP back to the pose, a warp to a nearby view, and the warp loss.
// Writes a few PNGs into the working directory.
#include "psk/meshes.hpp"
#include "psk/png_io.hpp"
#include "psk/representation.hpp"
#include "psk/scene.hpp"
#include "psk/losses.hpp"
#include "psk/warp.hpp"

#include <iostream>

using namespace psk;

int main()
{
    const auto mesh = make_textured_box();
    Intrinsics k;
    k.fx = k.fy = 200;
    k.cx = k.cy = 64;
    k.width = k.height = 128;

    std::mt19937_64 rng(7);
    const auto syn = generate_scene(mesh, k, rng, Domain::Synthetic);
    std::mt19937_64 twin(7);
    const auto real = generate_scene(mesh, k, twin, Domain::PseudoReal);
    write_png("demo_synthetic.png", syn.image);
    write_png("demo_pseudo_real.png", real.image);

    // pose -> projected box corners -> PnP -> pose
    const auto h = pi_map(syn.gt_pose, mesh, k, RepresentationKind::Sparse);
    const auto solved = solve_representation(h, mesh, k);
    std::cout << "PnP round trip: rotation error " << rotation_angle(solved.result.pose, syn.gt_pose)
              << " rad, translation error " << translation_distance(solved.result.pose, syn.gt_pose) << " m\n";

    // warp the view into one rotated by 10 degrees
    const Pose other{(so3_exp(Vec3(0, deg2rad(10), 0)) * syn.gt_pose.rotation).normalized(), syn.gt_pose.translation};
    const auto rs = render(syn.gt_pose, mesh, k), rt = render(other, mesh, k);
    const auto w = warp_source_to_target(rs.color, rs.depth, relative_transform(syn.gt_pose, other), k);
    write_png("demo_warped.png", w.warped);
    write_png("demo_target.png", rt.color);
    const double aligned = warp_loss(w.warped, rt.color, rt.silhouette, &w.validity, false).value;
    const auto wrong = warp_source_to_target(rs.color, rs.depth, Pose{}, k);
    const double misaligned = warp_loss(wrong.warped, rt.color, rt.silhouette, &wrong.validity, false).value;
    std::cout << "warp loss with the true relative pose " << aligned << ", with identity " << misaligned << "\n";
    return 0;
}
