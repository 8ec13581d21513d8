#!/usr/bin/env node
import { main } from './cli';

main(process.argv.slice(2)).then(
  code => process.exit(code),
  err => {
    console.error(String(err instanceof Error ? err.stack ?? err.message : err));
    process.exit(1);
  },
);
