/// Program-level state driven by the dashboard's text commands.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dashboard {
    pub program_running: bool,
    pub loaded_program: Option<String>,
    pub powered: bool,
}

impl Dashboard {
    /// Reply to one request line (without its terminator).
    pub fn handle_line(&mut self, line: &str) -> String {
        let line = line.trim();
        match line {
            "play" => {
                self.program_running = true;
                "Starting program".into()
            }
            "stop" => {
                self.program_running = false;
                "Stopped".into()
            }
            "pause" => {
                self.program_running = false;
                "Pausing program".into()
            }
            "running?" => format!("Program running: {}", self.program_running),
            "robotmode" => "Robotmode: RUNNING".into(),
            "power on" => {
                self.powered = true;
                "Powering on".into()
            }
            "power off" => {
                self.powered = false;
                "Powering off".into()
            }
            "brake release" => "Brake releasing".into(),
            _ => match line.strip_prefix("load ") {
                Some(name) if !name.trim().is_empty() => {
                    let name = name.trim();
                    self.loaded_program = Some(name.to_string());
                    format!("Loading program: {name}")
                }
                _ => format!("could not understand: {line}"),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reply_table() {
        let mut d = Dashboard::default();
        assert_eq!(d.handle_line("running?"), "Program running: false");
        assert_eq!(d.handle_line("play"), "Starting program");
        assert!(d.program_running);
        assert_eq!(d.handle_line("running?"), "Program running: true");
        assert_eq!(d.handle_line("pause"), "Pausing program");
        assert_eq!(d.handle_line("stop"), "Stopped");
        assert_eq!(d.handle_line("robotmode"), "Robotmode: RUNNING");
        assert_eq!(d.handle_line("power on"), "Powering on");
        assert_eq!(d.handle_line("power off"), "Powering off");
        assert_eq!(d.handle_line("brake release"), "Brake releasing");
        assert_eq!(d.handle_line("load pick.urp"), "Loading program: pick.urp");
        assert_eq!(d.loaded_program.as_deref(), Some("pick.urp"));
        assert_eq!(d.handle_line("foo"), "could not understand: foo");
        assert_eq!(d.handle_line("load "), "could not understand: load");
    }
}
