//! Extension snippets run on their own thread, handing control back and forth with
//! the control loop so that `sleep` consumes whole ticks and timing stays deterministic.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread::JoinHandle;

use crate::script::{Env, ScriptError, ScriptHost};

pub(crate) enum Yield {
    Log(String),
    Sleep(u64),
    Done(Result<(), ScriptError>),
}

/// Outcome of handing control to a snippet until it yields.
pub(crate) enum Progress {
    Sleeping(u64),
    Finished(Result<(), ScriptError>),
}

struct ThreadHost {
    events: Sender<Yield>,
    resume: Receiver<()>,
    frequency: f64,
}

impl ScriptHost for ThreadHost {
    fn sleep(&mut self, seconds: f64) -> Result<(), String> {
        let ticks = (seconds * self.frequency - 1e-9).ceil().max(0.0) as u64;
        if ticks == 0 {
            return Ok(());
        }
        self.events
            .send(Yield::Sleep(ticks))
            .map_err(|_| "controller stopped".to_string())?;
        self.resume.recv().map_err(|_| "controller stopped".to_string())
    }

    fn log(&mut self, message: &str) {
        let _ = self.events.send(Yield::Log(message.to_string()));
    }
}

/// A snippet invocation in flight.
pub(crate) struct SnippetRun {
    resume: Sender<()>,
    events: Receiver<Yield>,
    handle: Option<JoinHandle<()>>,
}

impl SnippetRun {
    /// Starts `function` on a copy of `env`; it runs until its first yield when [`SnippetRun::run`] is called.
    pub fn spawn(env: &Env, function: String, frequency: f64) -> std::io::Result<SnippetRun> {
        let (event_tx, event_rx) = channel();
        let (resume_tx, resume_rx) = channel();
        let mut env = env.clone();
        let handle = std::thread::Builder::new()
            .name(format!("snippet-{function}"))
            .spawn(move || {
                let mut host = ThreadHost {
                    events: event_tx,
                    resume: resume_rx,
                    frequency,
                };
                if host.resume.recv().is_err() {
                    return;
                }
                let result = env.call(&function, &[], &mut host).map(|_| ());
                let _ = host.events.send(Yield::Done(result));
            })?;
        Ok(SnippetRun {
            resume: resume_tx,
            events: event_rx,
            handle: Some(handle),
        })
    }

    /// Lets the snippet run until it sleeps or finishes; log lines go to `log`.
    pub fn run(&mut self, log: &mut dyn FnMut(String)) -> Progress {
        if self.resume.send(()).is_err() {
            return Progress::Finished(Err(ScriptError::Builtin("snippet thread exited".into())));
        }
        loop {
            match self.events.recv() {
                Ok(Yield::Log(m)) => log(m),
                Ok(Yield::Sleep(n)) => return Progress::Sleeping(n),
                Ok(Yield::Done(r)) => {
                    if let Some(h) = self.handle.take() {
                        let _ = h.join();
                    }
                    return Progress::Finished(r);
                }
                Err(_) => {
                    return Progress::Finished(Err(ScriptError::Builtin("snippet thread panicked".into())))
                }
            }
        }
    }
}

impl Drop for SnippetRun {
    fn drop(&mut self) {
        // Dropping the resume sender makes a sleeping snippet fail out of its sleep.
        let (dead, _) = channel();
        self.resume = dead;
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
