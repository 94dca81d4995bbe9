use std::sync::Arc;
use std::thread;
use std::time::Duration;

use urstack::client::{ClientError, ControlScript, ControlSession, DashboardSession, IoSession, ReceiveSession};
use urstack::controller::layout::error_code;
use urstack::controller::{ControllerConfig, ControllerHost};
use urstack::kinematics::fk;
use urstack::wire::{Bank, FieldValue, Register, RegisterValue};

fn host() -> ControllerHost {
    let cfg = ControllerConfig {
        rtde_port: 0,
        dashboard_port: 0,
        ..ControllerConfig::default()
    };
    ControllerHost::spawn(cfg).unwrap()
}

fn gripper_script() -> String {
    let mut s = ControlScript::new();
    s.add_preamble("def sg_grip(width):\n  if width < 0:\n    return 0\n  end\n  return width\nend\n");
    s.add_snippet(
        256,
        "width = read_input_integer_register(19)\nachieved = sg_grip(width)\nwrite_output_integer_register(19, achieved)\n",
    );
    s.render()
}

#[test]
fn control_is_exclusive_and_released_on_close() {
    let h = host();
    let first = ControlSession::connect(h.rtde_addr()).unwrap();
    match ControlSession::connect(h.rtde_addr()) {
        Err(ClientError::ControlBusy(_)) => {}
        other => panic!("expected exclusivity error, got {:?}", other.err()),
    }
    drop(first);
    let mut ok = false;
    for _ in 0..100 {
        if ControlSession::connect(h.rtde_addr()).is_ok() {
            ok = true;
            break;
        }
        thread::sleep(Duration::from_millis(10));
    }
    assert!(ok, "control role not released");
}

#[test]
fn receive_sessions_are_unlimited_and_consistent() {
    let h = host();
    let control = ControlSession::connect(h.rtde_addr()).unwrap();
    let receivers: Vec<_> = (0..3)
        .map(|_| ReceiveSession::connect_default(h.rtde_addr(), 500.0).unwrap())
        .collect();
    assert!(matches!(receivers[0].snapshot(), Err(ClientError::NoData)));
    control.idle(5).unwrap();
    let chain = h.inspect(|c| c.chain().clone()).unwrap();
    let home = urstack::kinematics::Chain::builtin("six_dof_example").unwrap().home.unwrap();
    for r in &receivers {
        let s = r.wait_received(5, Duration::from_secs(5)).unwrap();
        assert_eq!(&s.q[..], &home[..]);
        let pose = fk(&chain, &s.q).unwrap();
        assert!((pose.position - s.tcp_pose.position).norm() < 1e-12);
    }
}

#[test]
fn bad_field_name_is_named_in_error() {
    let h = host();
    match ReceiveSession::connect(h.rtde_addr(), &["actual_q", "bogus_field"], 100.0) {
        Err(ClientError::RecipeRejected(reason)) => assert!(reason.contains("bogus_field"), "{reason}"),
        other => panic!("unexpected {:?}", other.err()),
    }
}

#[test]
fn motion_commands_round_trip() {
    let h = host();
    let c = ControlSession::connect(h.rtde_addr()).unwrap();
    let q = c.snapshot().q;
    let out = c.move_j(&q, 1.0, 1.0, false).unwrap();
    assert!(out.completed);

    let mut target = q;
    target[0] += 0.3;
    let started = c.move_j(&target, 1.0, 2.0, false);
    assert!(started.unwrap().completed);
    assert!((c.snapshot().q[0] - target[0]).abs() < 1e-12);

    let mut far = target;
    far[0] -= 1.0;
    let a = c.move_j(&far, 0.5, 10.0, true).unwrap();
    assert!(!a.completed);
    c.idle(100).unwrap();
    assert!(c.snapshot().qd[0].abs() > 0.4);
    c.stop_j(5.0).unwrap();
    assert!(c.snapshot().qd.iter().all(|v| *v == 0.0));
    match c.wait_for(a.seq, Some(10), None) {
        Err(ClientError::Command { code, .. }) => assert_eq!(code, error_code::PREEMPTED),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn command_during_sync_command_is_rejected_busy() {
    let h = host();
    let c = ControlSession::connect(h.rtde_addr()).unwrap();
    let mut target = c.snapshot().q;
    target[0] += 0.5;
    // Start a synchronous MOVEJ through the raw registers so the session does not block on it.
    for (i, v) in target.iter().enumerate() {
        c.write_register(Register::new(Bank::InputFloat, i), RegisterValue::Float(*v)).unwrap();
    }
    c.write_register(Register::new(Bank::InputFloat, 6), RegisterValue::Float(1.0)).unwrap();
    c.write_register(Register::new(Bank::InputFloat, 7), RegisterValue::Float(1.0)).unwrap();
    c.write_register(Register::new(Bank::InputInt, 2), RegisterValue::Int(0)).unwrap();
    c.write_register(Register::new(Bank::InputInt, 0), RegisterValue::Int(1)).unwrap();
    c.write_register(Register::new(Bank::InputInt, 1), RegisterValue::Int(1000)).unwrap();
    c.step().unwrap();
    match c.move_j(&target, 1.0, 1.0, true) {
        Err(ClientError::Command { code, .. }) => assert_eq!(code, error_code::BUSY),
        other => panic!("unexpected {other:?}"),
    }
    let mut n = 0;
    while c.step().unwrap().output_int[0] != 1000 {
        n += 1;
        assert!(n < 5000);
    }
    assert!((c.snapshot().q[0] - target[0]).abs() < 1e-12);
}

#[test]
fn zero_ft_and_contact() {
    let h = host();
    let c = ControlSession::connect(h.rtde_addr()).unwrap();
    c.zero_ft_sensor().unwrap();
    assert_eq!(c.step().unwrap().tcp_force, [0.0; 6]);
    let out = c.move_until_contact([0.0, 0.0, -0.05, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(out.contact, Some(true));
    let z = c.snapshot().tcp_pose.position.z;
    assert!((0.185..0.2).contains(&z), "z = {z}");
}

#[test]
fn extension_handshake_through_session() {
    let h = host();
    let c = ControlSession::connect_with_script(h.rtde_addr(), &gripper_script()).unwrap();
    assert_eq!(c.extension_ids(), &[256]);
    c.set_wire_tap(true);
    let values = c
        .trigger_extension(
            256,
            &[(Register::new(Bank::InputInt, 19), RegisterValue::Int(40))],
            &[Register::new(Bank::OutputInt, 19)],
            100,
        )
        .unwrap();
    assert_eq!(values, vec![RegisterValue::Int(40)]);
    assert_eq!(c.snapshot().output_float[18], 0.0);

    // Parameters reach the wire strictly before the trigger.
    let log = c.take_wire_log();
    let value_of = |pkg: &Vec<(String, FieldValue)>, name: &str| pkg.iter().find(|(n, _)| n == name).unwrap().1;
    let first_param = log
        .iter()
        .position(|p| value_of(p, "input_int_register_19") == FieldValue::Int32(40))
        .unwrap();
    let first_trigger = log
        .iter()
        .position(|p| value_of(p, "input_double_register_18") == FieldValue::Double(256.0))
        .unwrap();
    assert!(first_param < first_trigger);

    match c.trigger_extension(999, &[], &[], 20) {
        Err(ClientError::Timeout { .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(c.snapshot().output_float[18], 0.0);
}

#[test]
fn overlapping_triggers_serialize() {
    let h = host();
    let c = Arc::new(ControlSession::connect_with_script(h.rtde_addr(), &gripper_script()).unwrap());
    let handles: Vec<_> = [10, 60]
        .into_iter()
        .map(|w| {
            let c = c.clone();
            thread::spawn(move || {
                c.trigger_extension(
                    256,
                    &[(Register::new(Bank::InputInt, 19), RegisterValue::Int(w))],
                    &[Register::new(Bank::OutputInt, 19)],
                    100,
                )
                .unwrap()
            })
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(results, vec![vec![RegisterValue::Int(10)], vec![RegisterValue::Int(60)]]);
}

#[test]
fn rejected_script_reports_line() {
    let h = host();
    match ControlSession::connect_with_script(h.rtde_addr(), "x = 1\ny = 2\nif x\n") {
        Err(ClientError::ScriptRejected(text)) => assert!(text.contains("line 3") || text.contains("line 4"), "{text}"),
        other => panic!("unexpected {:?}", other.err()),
    }
}

#[test]
fn digital_outputs() {
    let h = host();
    let c = ControlSession::connect(h.rtde_addr()).unwrap();
    let mut io = IoSession::connect(h.rtde_addr()).unwrap();
    io.set_standard_digital_out(3, true).unwrap();
    io.set_standard_digital_out(5, true).unwrap();
    assert_eq!(c.step().unwrap().digital_out, 0b10_1000);
    io.set_standard_digital_out(3, false).unwrap();
    assert_eq!(c.step().unwrap().digital_out, 0b10_0000);
    assert!(matches!(io.set_standard_digital_out(8, true), Err(ClientError::PinOutOfRange(8))));
}

#[test]
fn dashboard_session() {
    let h = host();
    let mut d = DashboardSession::connect(h.dashboard_addr()).unwrap();
    assert_eq!(d.send("play").unwrap(), "Starting program");
    assert_eq!(d.send("running?").unwrap(), "Program running: true");
    assert_eq!(d.send("foo").unwrap(), "could not understand: foo");
    assert!(h.inspect(|c| c.dashboard().program_running).unwrap());
}
