//! Threaded station: one thread per sensor plus the orchestrator, joined by
//! channels. Station time advances with the timestamps it is fed, so a
//! live source only has to send samples (and optionally ticks).

use std::sync::mpsc::{self, Receiver, Sender};
use std::thread::{self, JoinHandle};

use log::{debug, error};
use thiserror::Error;

use super::{summarize, Orchestrator, RunSummary, StationConfig, StationError, StationInput, Transport};
use crate::uplinkqueue::LogStorage;
use crate::weighing::{WeighingEngine, WeighingEvent, WeightSample};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("station thread has stopped")]
    Stopped,
    #[error("station thread panicked")]
    Panicked,
}

enum OrchMsg {
    Weighing(WeighingEvent),
    Input(StationInput),
    Tick(i64),
    Shutdown { drain_ms: i64 },
}

/// Handle to a running threaded station.
pub struct StationHandle {
    samples: Option<Sender<WeightSample>>,
    rfid: Option<Sender<StationInput>>,
    control: Sender<OrchMsg>,
    weighing: Option<JoinHandle<()>>,
    reader: Option<JoinHandle<()>>,
    orchestrator: JoinHandle<RunSummary>,
}

impl StationHandle {
    /// Route one input to the thread that owns it.
    pub fn send(&self, input: StationInput) -> Result<(), RuntimeError> {
        let sent = match input {
            StationInput::Sample(s) => self.samples.as_ref().map(|tx| tx.send(s).is_ok()),
            StationInput::Detection(_) | StationInput::Frame { .. } => self.rfid.as_ref().map(|tx| tx.send(input).is_ok()),
            other => Some(self.control.send(OrchMsg::Input(other)).is_ok()),
        };
        if sent == Some(true) {
            Ok(())
        } else {
            Err(RuntimeError::Stopped)
        }
    }

    /// Let station time pass without input.
    pub fn tick(&self, ts: i64) -> Result<(), RuntimeError> {
        self.control.send(OrchMsg::Tick(ts)).map_err(|_| RuntimeError::Stopped)
    }

    /// Close the sensor channels, finish the last episode, then drain the
    /// queue for up to `drain_ms` of station time.
    pub fn shutdown(mut self, drain_ms: i64) -> Result<RunSummary, RuntimeError> {
        self.samples.take();
        self.rfid.take();
        for h in [self.weighing.take(), self.reader.take()].into_iter().flatten() {
            h.join().map_err(|_| RuntimeError::Panicked)?;
        }
        self.control.send(OrchMsg::Shutdown { drain_ms }).map_err(|_| RuntimeError::Stopped)?;
        self.orchestrator.join().map_err(|_| RuntimeError::Panicked)
    }
}

pub fn spawn<S, T>(cfg: StationConfig, storage: S, mut transport: T) -> Result<StationHandle, StationError>
where
    S: LogStorage + Send + 'static,
    T: Transport + Send + 'static,
{
    let mut orch = Orchestrator::new(cfg.clone(), storage)?;
    let (control, inbox) = mpsc::channel::<OrchMsg>();
    let (samples, sample_rx) = mpsc::channel::<WeightSample>();
    let (rfid, rfid_rx) = mpsc::channel::<StationInput>();

    let weighing = {
        let out = control.clone();
        let engine = WeighingEngine::new(cfg.weighing.clone());
        thread::Builder::new().name("weighing".into()).spawn(move || weighing_loop(engine, sample_rx, out))
    }
    .expect("spawning weighing thread");
    let reader = {
        let out = control.clone();
        thread::Builder::new().name("rfid".into()).spawn(move || {
            for input in rfid_rx {
                if out.send(OrchMsg::Input(input)).is_err() {
                    break;
                }
            }
        })
    }
    .expect("spawning rfid thread");
    let orchestrator = thread::Builder::new()
        .name("orchestrator".into())
        .spawn(move || {
            for msg in inbox {
                match msg {
                    OrchMsg::Weighing(ev) => orch.on_weighing_event(ev),
                    OrchMsg::Tick(ts) => orch.advance_to(ts, &mut transport),
                    OrchMsg::Input(input) => {
                        orch.advance_to(input.ts(), &mut transport);
                        match input {
                            StationInput::Detection(d) if !orch.rfid_down => orch.on_detection(d),
                            StationInput::Frame { ts, frame } if !orch.rfid_down => orch.on_frame(ts, &frame),
                            StationInput::RfidFault { down, .. } => orch.set_rfid_down(down),
                            StationInput::Env { reading, .. } => orch.set_env(reading),
                            StationInput::OperatorReset { .. } => orch.operator_reset(),
                            _ => {}
                        }
                    }
                    OrchMsg::Shutdown { drain_ms } => {
                        orch.stop_periodic();
                        orch.release_all();
                        let deadline = orch.now() + drain_ms;
                        let drained = orch.drain(&mut transport, deadline);
                        return summarize(&orch, drained);
                    }
                }
            }
            error!("control channel closed without shutdown");
            summarize(&orch, false)
        })
        .expect("spawning orchestrator thread");
    Ok(StationHandle {
        samples: Some(samples),
        rfid: Some(rfid),
        control,
        weighing: Some(weighing),
        reader: Some(reader),
        orchestrator,
    })
}

fn weighing_loop(mut engine: WeighingEngine, rx: Receiver<WeightSample>, out: Sender<OrchMsg>) {
    for s in rx {
        for ev in engine.ingest(s) {
            if out.send(OrchMsg::Weighing(ev)).is_err() {
                return;
            }
        }
        if out.send(OrchMsg::Tick(s.t)).is_err() {
            return;
        }
    }
    debug!("sample channel closed, flushing");
    for ev in engine.flush() {
        let _ = out.send(OrchMsg::Weighing(ev));
    }
}
