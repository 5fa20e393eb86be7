from hrvaf.cli import main

raise SystemExit(main())
