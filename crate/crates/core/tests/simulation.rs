//! Long-horizon scenario behavior across all three steppers: tossed bodies
//! land and stay put, friction only removes tangential speed, and rollouts
//! are bit-for-bit repeatable.

use cfstep::scenarios::{build_scene, run_simulation, settle, SceneOptions, StepperChoice};

const ALL_STEPPERS: [StepperChoice; 3] =
    [StepperChoice::Cf, StepperChoice::CfExtended, StepperChoice::Qp];

#[test]
fn tossed_cube_lands_and_comes_to_rest() {
    let scene = build_scene("falling_cube", &SceneOptions::default()).unwrap();
    // rest is a property of the damped extension and the rigid baseline;
    // the undamped form keeps an implicit-spring bounce alive by design
    for stepper in [StepperChoice::CfExtended, StepperChoice::Qp] {
        // 4 s of fall, impact, tumble, and rest at h = 2 ms
        let trace = run_simulation(&scene, stepper, 2000).unwrap();
        let twist = &trace.velocities.last().unwrap().object_twists[0];
        let pose = &trace.states.last().unwrap().object_poses[0];
        assert!(
            twist.linear.norm() < 5e-3 && twist.angular.norm() < 0.2,
            "{stepper:?} still moving: v {:.3e}, w {:.3e}",
            twist.linear.norm(),
            twist.angular.norm()
        );
        // a cube at rest carries its center between a flat face (half edge
        // minus the contact sink) and a corner balance (sqrt(3) half edge)
        assert!(
            (0.025..=0.055).contains(&pose.position.z),
            "{stepper:?} ended off the ground at z {:.4}",
            pose.position.z
        );
    }
}

#[test]
fn tossed_cube_stays_bounded_under_the_undamped_form() {
    let scene = build_scene("falling_cube", &SceneOptions::default()).unwrap();
    let trace = run_simulation(&scene, StepperChoice::Cf, 2000).unwrap();
    // the soft implicit spring lets the impact dip below the surface before
    // it rebounds; the run must neither escape the floor nor gain energy
    for z in trace.object_heights(0) {
        assert!((-0.05..=0.5).contains(&z), "cube tunneled or flew: z {z:.3}");
    }
}

#[test]
fn settled_cube_stays_put_without_input() {
    let scene = build_scene("sliding_cube", &SceneOptions::default()).unwrap();
    for stepper in ALL_STEPPERS {
        let rest = settle(&scene, stepper, 1500).unwrap();
        let mut quiet = scene.clone();
        quiet.initial_state = rest.clone();
        quiet.initial_velocity =
            cfstep::se3::GeneralizedVelocity::zero(scene.layout);
        let trace = run_simulation(&quiet, stepper, 500).unwrap();
        let drift = (trace.states.last().unwrap().object_poses[0].position
            - rest.object_poses[0].position)
            .norm();
        // the undamped form hums around its spring sink at the 0.1 mm scale
        let tol = if stepper == StepperChoice::Cf { 1e-3 } else { 1e-4 };
        assert!(drift < tol, "{stepper:?} drifted {drift:.3e} m at rest");
    }
}

#[test]
fn friction_only_removes_tangential_speed() {
    let scene = build_scene("sliding_cube", &SceneOptions::default()).unwrap();
    let rest = settle(&scene, StepperChoice::CfExtended, 1500).unwrap();
    let mut run = scene.clone();
    run.initial_state = rest;
    let trace = run_simulation(&run, StepperChoice::CfExtended, 750).unwrap();
    let speeds: Vec<f64> =
        trace.velocities.iter().map(|v| v.object_twists[0].linear.xy().norm()).collect();
    for pair in speeds.windows(2) {
        if pair[0] < 0.01 {
            break;
        }
        assert!(pair[1] <= pair[0] + 1e-9, "speed rose while sliding: {} -> {}", pair[0], pair[1]);
    }
    assert!(speeds[0] > 1.9, "kick not applied: {}", speeds[0]);
    assert!(*speeds.last().unwrap() < 0.01, "never stopped: {}", speeds.last().unwrap());
}

#[test]
fn rollouts_are_bitwise_repeatable() {
    for (scene_name, stepper) in [
        ("push_boxes", StepperChoice::Cf),
        ("falling_cube", StepperChoice::Qp),
        ("sphere_two_planes", StepperChoice::CfExtended),
    ] {
        let scene = build_scene(scene_name, &SceneOptions::default()).unwrap();
        let a = run_simulation(&scene, stepper, 100).unwrap();
        let b = run_simulation(&scene, stepper, 100).unwrap();
        let fa = a.states.last().unwrap().to_flat();
        let fb = b.states.last().unwrap().to_flat();
        assert_eq!(fa, fb, "{scene_name} replay diverged");
        assert_eq!(
            a.velocities.last().unwrap().to_flat(),
            b.velocities.last().unwrap().to_flat(),
            "{scene_name} replay velocities diverged"
        );
    }
}
